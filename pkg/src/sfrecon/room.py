"""Image-source room simulation and the RirSet container.

Shoebox rooms with one uniform pressure reflection coefficient on all six
walls. By default the coefficient is tuned so that the Schroeder decay of
the image-source response matches the requested RT60 (Eyring's coefficient
is the upper bracket; used as is it overshoots the decay time because late
images add coherently). ``reflection_model="eyring"`` keeps the closed form, and
an explicit ``reflection`` overrides both (``reflection=0`` is free field).
Each image contributes ``beta**order / (4 pi d)`` at a delay of ``d / c``
seconds, spread over 81 taps by a Hann-windowed sinc lowpass whose
stopband starts at ``cutoff``.
"""

from __future__ import annotations

import functools
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GridSpec

__all__ = [
    "RoomSpec",
    "RirSet",
    "eyring_reflection",
    "simulate_rir",
    "simulate_rirs",
    "simulate_grid_rirs",
    "lowpass_kernel",
    "save_sfr",
    "load_sfr",
    "save_rirset_csv",
    "SFR_MAGIC",
    "SFR_VERSION",
]

log = logging.getLogger(__name__)

FD_TAPS = 81
_HALF = FD_TAPS // 2
# Hann windowed sinc: stopband edge sits roughly this many bins of
# fs / FD_TAPS above the sinc cutoff.
_GUARD_BINS = 2.0


def eyring_reflection(dimensions, rt60, speed_of_sound=343.0) -> float:
    """Uniform pressure reflection coefficient reproducing ``rt60`` (Eyring)."""
    Lx, Ly, Lz = dimensions
    V = Lx * Ly * Lz
    S = 2 * (Lx * Ly + Lx * Lz + Ly * Lz)
    alpha = 1.0 - np.exp(-24 * np.log(10) * V / (speed_of_sound * S * rt60))
    return float(np.sqrt(1.0 - alpha))


def _t30(edc_db, dt):
    """Slope of the -5..-35 dB part of a decay curve, extrapolated to 60 dB."""
    i5 = int(np.argmax(edc_db < -5))
    i35 = int(np.argmax(edc_db < -35))
    if i35 <= i5 + 1:
        return np.inf
    t = np.arange(i5, i35) * dt
    slope = np.polyfit(t, edc_db[i5:i35], 1)[0]
    return -60.0 / slope if slope < 0 else np.inf


@functools.lru_cache(maxsize=64)
def _decay_matched_reflection(dims, src, rt60, c, fs) -> float:
    """Reflection coefficient whose image-source response decays at ``rt60``.

    Images are summed per output sample (amplitudes, not energies): with
    positive reflection coefficients the late images add coherently at low
    frequencies, which slows the Schroeder decay well beyond Eyring's value.
    """
    dims = np.array(dims)
    src = np.array(src)
    horizon = 1.2 * rt60
    probe = 0.5 * dims
    max_dist = c * horizon
    reach = np.ceil(max_dist / (2 * dims)).astype(int) + 1
    pos_ax, ord_ax = [], []
    for a in range(3):
        m = np.arange(-reach[a], reach[a] + 1)
        pos_ax.append(np.concatenate([src[a] + 2 * m * dims[a], -src[a] + 2 * m * dims[a]]))
        ord_ax.append(np.concatenate([2 * np.abs(m), np.abs(m - 1) + np.abs(m)]))
    dx = (pos_ax[0] - probe[0]) ** 2
    dy = (pos_ax[1] - probe[1]) ** 2
    dz = (pos_ax[2] - probe[2]) ** 2
    d = np.sqrt(dx[:, None, None] + dy[None, :, None] + dz[None, None, :]).ravel()
    n = (ord_ax[0][:, None, None] + ord_ax[1][None, :, None] + ord_ax[2][None, None, :]).ravel()
    keep = d <= max_dist
    d, n = d[keep], n[keep].astype(float)
    bins = np.rint(d / c * fs).astype(int)
    nbins = int(bins.max()) + 1
    base = 1.0 / (4 * np.pi * np.maximum(d, c / fs))

    def rt(beta):
        h = np.bincount(bins, weights=base * beta**n, minlength=nbins)
        edc = np.cumsum(h[::-1] ** 2)[::-1]
        return _t30(10 * np.log10(edc / edc[0] + 1e-300), 1.0 / fs)

    lo, hi = 1e-3, eyring_reflection(dims, rt60, c)
    while rt(hi) < rt60 and hi < 0.999:
        hi = min(0.999, hi ** 0.5)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if rt(mid) < rt60:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class RoomSpec:
    dimensions: np.ndarray
    rt60: float
    source_position: np.ndarray
    sample_rate: float = 8000.0
    cutoff: float | None = None
    speed_of_sound: float = 343.0
    max_image_order: int | None = None
    reflection: float | None = None
    reflection_model: str = "decay"
    fractional: str = "sinc"

    def __post_init__(self):
        dims = np.array(self.dimensions, dtype=float).ravel()
        src = np.array(self.source_position, dtype=float).ravel()
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dimensions!r}")
        if src.shape != (3,) or np.any(src <= 0) or np.any(src >= dims):
            raise ValueError(f"source position {self.source_position!r} is not strictly inside the room")
        dims.setflags(write=False)
        src.setflags(write=False)
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "source_position", src)
        if not self.rt60 > 0:
            raise ValueError("rt60 must be positive")
        if not self.sample_rate > 0 or not self.speed_of_sound > 0:
            raise ValueError("sample rate and speed of sound must be positive")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", 0.9 * self.sample_rate / 2)
        if not 0 < self.cutoff < self.sample_rate / 2:
            raise ValueError(
                f"cutoff {self.cutoff} Hz must lie in (0, fs/2 = {self.sample_rate / 2} Hz)"
            )
        if self.reflection is not None and not 0 <= self.reflection < 1:
            raise ValueError("reflection coefficient must lie in [0, 1)")
        if self.reflection_model not in ("decay", "eyring"):
            raise ValueError("reflection_model must be 'decay' or 'eyring'")
        if self.fractional not in ("sinc", "nearest"):
            raise ValueError("fractional must be 'sinc' or 'nearest'")

    @property
    def beta(self) -> float:
        if self.reflection is not None:
            return float(self.reflection)
        if self.reflection_model == "eyring":
            return eyring_reflection(self.dimensions, self.rt60, self.speed_of_sound)
        return _decay_matched_reflection(
            tuple(self.dimensions),
            tuple(self.source_position),
            float(self.rt60),
            float(self.speed_of_sound),
            float(self.sample_rate),
        )

    @property
    def image_order(self) -> int:
        if self.max_image_order is not None:
            return int(self.max_image_order)
        return int(np.ceil(self.speed_of_sound * self.rt60 / self.dimensions.min())) + 1

    def contains(self, pos) -> np.ndarray:
        p = np.asarray(pos, dtype=float)
        return np.all((p >= 0) & (p <= self.dimensions), axis=-1)


@dataclass(frozen=True, eq=False)
class RirSet:
    """Grid RIRs, one row per grid point in canonical order."""

    grid: GridSpec
    data: np.ndarray
    sample_rate: float = 8000.0
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = np.array(self.data, dtype=float)
        if d.ndim != 2 or d.shape[0] != self.grid.size or d.shape[1] < 1:
            raise ValueError(
                f"RIR data must have shape ({self.grid.size}, L), got {np.shape(self.data)}"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("RIR data must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def length(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.data.shape[0]


def _image_sources(room: RoomSpec, max_dist: float, center) -> tuple[np.ndarray, np.ndarray]:
    """Image positions and reflection orders within ``max_dist`` of ``center``."""
    dims = room.dimensions
    src = room.source_position
    order = room.image_order
    reach = np.ceil((max_dist + np.linalg.norm(dims)) / (2 * dims)).astype(int) + 1
    reach = np.minimum(reach, order + 1)
    axes_pos, axes_ord = [], []
    for a in range(3):
        m = np.arange(-reach[a], reach[a] + 1)
        pos, ords = [], []
        for p in (0, 1):
            pos.append((1 - 2 * p) * src[a] + 2 * m * dims[a])
            ords.append(np.abs(m - p) + np.abs(m))
        axes_pos.append(np.concatenate(pos))
        axes_ord.append(np.concatenate(ords))
    px, py, pz = np.meshgrid(*axes_pos, indexing="ij")
    ox, oy, oz = np.meshgrid(*axes_ord, indexing="ij")
    pos = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)
    ords = ox.ravel() + oy.ravel() + oz.ravel()
    keep = (ords <= 3 * order) & (np.linalg.norm(pos - center, axis=1) <= max_dist)
    if room.beta == 0.0:
        keep &= ords == 0
    return pos[keep], ords[keep]


def lowpass_kernel(t, sample_rate, cutoff):
    """Hann-windowed sinc evaluated at sample offsets ``t`` (zero outside the window)."""
    fl = cutoff - _GUARD_BINS * sample_rate / FD_TAPS
    if fl <= 0:
        raise ValueError("cutoff too low for the fractional delay kernel")
    wc = 2 * fl / sample_rate
    win = np.where(np.abs(t) < _HALF + 1, 0.5 * (1 + np.cos(np.pi * t / (_HALF + 1))), 0.0)
    return wc * np.sinc(wc * t) * win


def _spread_kernel(rows, tau, amp, nrows, length, fs, cutoff):
    """Accumulate ``amp * lowpass_kernel(k - tau)`` into an ``(nrows, length)`` array.

    Sine and window terms advance tap by tap as complex phasors, which is
    equivalent to evaluating :func:`lowpass_kernel` directly.
    """
    fl = cutoff - _GUARD_BINS * fs / FD_TAPS
    wc = 2 * fl / fs
    pad = _HALF + 2
    width = length + pad + FD_TAPS + 2
    k0 = np.floor(tau).astype(int) - _HALF
    t = k0 - tau
    sin_ph = np.exp(1j * np.pi * wc * t)
    win_ph = np.exp(1j * np.pi * t / (_HALF + 1))
    sin_step = np.exp(1j * np.pi * wc)
    win_step = np.exp(1j * np.pi / (_HALF + 1))
    base = rows * width + k0 + pad
    acc = np.zeros(nrows * width)
    scale = amp / np.pi
    for j in range(FD_TAPS + 1):  # |t| < 41 can span 82 taps
        tj = t + j
        small = np.abs(tj) < 1e-9
        safe = np.where(small, 1.0, tj)
        val = np.where(small, wc * amp, scale * sin_ph.imag / safe) * (0.5 * (1.0 + win_ph.real))
        acc += np.bincount(base + j, weights=val, minlength=acc.size)
        sin_ph *= sin_step
        win_ph *= win_step
    return acc.reshape(nrows, width)[:, pad : pad + length]


def simulate_rirs(room: RoomSpec, receivers, length: int, chunk: int = 2048) -> np.ndarray:
    """Image-source RIRs for many receivers, shape ``(P, length)``."""
    if length <= 0:
        raise ValueError("RIR length must be positive")
    rec = np.asarray(receivers, dtype=float).reshape(-1, 3)
    if not np.all(room.contains(rec)):
        bad = rec[~room.contains(rec)][0]
        raise ValueError(f"receiver {bad.tolist()} lies outside the room")
    fs, c = room.sample_rate, room.speed_of_sound
    max_dist = (length + _HALF + 1) * c / fs
    lo, hi = rec.min(axis=0), rec.max(axis=0)
    center = 0.5 * (lo + hi)
    imgs, ords = _image_sources(room, max_dist + 0.5 * np.linalg.norm(hi - lo), center)
    gain = room.beta ** ords.astype(float)
    dmin = c / fs
    out = np.zeros((rec.shape[0], length))
    for s in range(0, rec.shape[0], max(1, chunk)):
        r = rec[s : s + chunk]
        d = np.linalg.norm(r[:, None, :] - imgs[None, :, :], axis=2)
        if np.any(d < dmin):
            warnings.warn(
                "receiver closer than one sample of travel to a source image; "
                f"clamping distance to {dmin:.4g} m",
                RuntimeWarning,
                stacklevel=2,
            )
            d = np.maximum(d, dmin)
        tau = d * fs / c
        amp = gain[None, :] / (4 * np.pi * d)
        live = tau < length + _HALF + 1
        rows = np.broadcast_to(np.arange(r.shape[0])[:, None], tau.shape)[live]
        tau, amp = tau[live], amp[live]
        if room.fractional == "nearest":
            block = np.zeros(r.shape[0] * length)
            k = np.rint(tau).astype(int)
            ok = k < length
            np.add.at(block, rows[ok] * length + k[ok], amp[ok])
            block = block.reshape(r.shape[0], length)
        else:
            block = _spread_kernel(rows, tau, amp, r.shape[0], length, fs, room.cutoff)
        out[s : s + chunk] = block
    return out


def simulate_rir(room: RoomSpec, receiver, length: int) -> np.ndarray:
    """Image-source RIR from the room's source to ``receiver``."""
    receiver = np.asarray(receiver, dtype=float).ravel()
    if receiver.shape != (3,):
        raise ValueError("receiver must be a 3-vector")
    return simulate_rirs(room, receiver[None, :], length)[0]


def simulate_grid_rirs(room: RoomSpec, grid: GridSpec, length: int) -> RirSet:
    pos = grid.positions()
    if not np.all(room.contains(pos)):
        raise ValueError("grid extends outside the room")
    return RirSet(grid, simulate_rirs(room, pos, length), room.sample_rate)


SFR_MAGIC = b"SFRIR\0"
SFR_VERSION = 1
_SFR_HEADER = struct.Struct("<6sH4I5d")


def save_sfr(rirs: RirSet, path) -> None:
    """Write the little-endian ``.sfr`` binary container."""
    g = rirs.grid
    header = _SFR_HEADER.pack(
        SFR_MAGIC, SFR_VERSION, *g.shape, rirs.length, g.spacing, *g.origin, rirs.sample_rate
    )
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(rirs.data, dtype="<f8").tobytes())


def load_sfr(path) -> RirSet:
    raw = Path(path).read_bytes()
    if len(raw) < _SFR_HEADER.size:
        raise ValueError(f"{path}: truncated .sfr header")
    magic, version, X, Y, Z, L, dx, ox, oy, oz, fs = _SFR_HEADER.unpack_from(raw)
    if magic != SFR_MAGIC:
        raise ValueError(f"{path}: not an .sfr file")
    if version != SFR_VERSION:
        raise ValueError(f"{path}: unsupported .sfr version {version}")
    n = X * Y * Z * L
    body = raw[_SFR_HEADER.size :]
    if len(body) != 8 * n:
        raise ValueError(f"{path}: expected {n} samples, found {len(body) // 8}")
    data = np.frombuffer(body, dtype="<f8").reshape(X * Y * Z, L)
    return RirSet(GridSpec([ox, oy, oz], dx, (X, Y, Z)), data.astype(float), fs)


def save_rirset_csv(rirs: RirSet, path) -> None:
    """Debug dump: one row per grid point, ``u,gx,gy,gz,h0,...``."""
    g = rirs.grid.multi_index(np.arange(len(rirs)))
    with Path(path).open("w") as fh:
        fh.write("u,gx,gy,gz," + ",".join(f"h{k}" for k in range(rirs.length)) + "\n")
        for u, (idx, row) in enumerate(zip(g, rirs.data)):
            fh.write(f"{u},{idx[0]},{idx[1]},{idx[2]}," + ",".join(repr(float(v)) for v in row) + "\n")
