"""Dynamic measurement simulation and linear-system assembly.

Measurements are stacked time-major: row ``n * Q + q`` holds microphone
``q`` at time sample ``n``. Excitation is periodic and assumed to have
started one period before ``n = 0``, so every convolution uses circular
indexing ``s((n - k) mod L_p)``.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .geometry import GridSpec, Trajectory
from .interp import InterpolationKernel, stencils, weight_matrix
from .room import RoomSpec, simulate_rirs
from .signals import ExcitationSignal

__all__ = [
    "MeasurementRecord",
    "FullSystem",
    "DecoupledSystem",
    "RirCache",
    "ImperfectSequenceWarning",
    "FULL_SIZE_LIMIT",
    "simulate_measurement",
    "add_noise",
    "convolution_rows",
    "assemble_full",
    "assemble_decoupled",
    "save_measurement",
    "load_measurement",
]

FULL_SIZE_LIMIT = 200_000_000


class ImperfectSequenceWarning(UserWarning):
    """The excitation is not a perfect sequence (e.g. an MLS)."""


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    samples: np.ndarray  # (M_t, Q)
    trajectory: Trajectory
    excitation: ExcitationSignal
    periods: int
    snr_db: float | None = None
    noise_seed: int | None = None

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape != self.trajectory.positions.shape[:2]:
            raise ValueError(
                f"samples shape {x.shape} does not match trajectory {self.trajectory.positions.shape[:2]}"
            )
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def vector(self) -> np.ndarray:
        """Stacked measurement vector ``x`` of length ``M = M_t * Q``."""
        return self.samples.reshape(-1)


class RirCache:
    """Memoized image-source RIRs for one room and RIR length.

    Lookups are lock-free reads of a dict; insertions take a lock.
    """

    def __init__(self, room: RoomSpec, length: int):
        self.room = room
        self.length = int(length)
        self._store: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def get_many(self, positions) -> np.ndarray:
        pos = np.ascontiguousarray(np.asarray(positions, dtype=float).reshape(-1, 3))
        keys = [p.tobytes() for p in pos]
        missing = [i for i, k in enumerate(keys) if k not in self._store]
        if missing:
            fresh = simulate_rirs(self.room, pos[missing], self.length)
            with self._lock:
                for i, h in zip(missing, fresh):
                    self._store.setdefault(keys[i], h)
        return np.array([self._store[k] for k in keys])


def _noise_power(excitation, snr_db, noise_power):
    if noise_power is not None:
        if noise_power < 0:
            raise ValueError("noise power must be non-negative")
        return float(noise_power)
    if snr_db is None:
        return 0.0
    return excitation.power / 10 ** (snr_db / 10)


def simulate_measurement(
    room: RoomSpec,
    traj: Trajectory,
    excitation: ExcitationSignal,
    R: int,
    snr_db: float | None = None,
    noise_seed: int | None = 0,
    rir_length: int | None = None,
    noise_power: float | None = None,
    cache: RirCache | None = None,
    chunk: int = 2048,
) -> MeasurementRecord:
    """Microphone signals for a periodic excitation in steady state.

    Each sample uses the image-source RIR at the microphone's exact
    position, not the grid-interpolated model. White Gaussian noise of power
    ``power / 10**(snr_db/10)`` is added when ``snr_db`` is given
    (``noise_power`` sets it directly).
    """
    Lp = excitation.period_length
    L = Lp if rir_length is None else int(rir_length)
    if L > Lp:
        raise ValueError(f"period shorter than RIR: L={L} > L_p={Lp}")
    if L < 1:
        raise ValueError("RIR length must be positive")
    if R < 1 or traj.sample_count != R * Lp:
        raise ValueError(
            f"trajectory has {traj.sample_count} samples, expected R * L_p = {R} * {Lp}"
        )
    if cache is not None and (cache.room is not room or cache.length != L):
        raise ValueError("RIR cache belongs to a different room or RIR length")

    M_t, Q = traj.sample_count, traj.mic_count
    flat = traj.positions.reshape(-1, 3)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.ravel()
    phase = np.repeat(np.arange(M_t) % Lp, Q)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(0, len(uniq) + chunk, chunk))
    s_spec = np.fft.rfft(excitation.samples)
    x = np.empty(M_t * Q)
    for c, start in enumerate(range(0, len(uniq), chunk)):
        block = uniq[start : start + chunk]
        H = simulate_rirs(room, block, L) if cache is None else cache.get_many(block)
        Y = np.fft.irfft(np.fft.rfft(H, n=Lp, axis=1) * s_spec, n=Lp, axis=1)
        sel = order[bounds[c] : bounds[c + 1]]
        x[sel] = Y[inv[sel] - start, phase[sel]]
    x = x.reshape(M_t, Q)

    rec = MeasurementRecord(x, traj, excitation, R, None, None)
    if _noise_power(excitation, snr_db, noise_power) == 0:
        return MeasurementRecord(x, traj, excitation, R, snr_db, noise_seed)
    return add_noise(rec, snr_db, noise_seed, noise_power)


def add_noise(
    record: MeasurementRecord,
    snr_db: float | None,
    noise_seed: int | None = 0,
    noise_power: float | None = None,
) -> MeasurementRecord:
    """Copy of a noise-free record with white Gaussian noise added.

    Same draw as :func:`simulate_measurement` with the same seed, so one
    noise-free simulation can serve many SNR and seed combinations.
    """
    x = record.samples
    sigma2 = _noise_power(record.excitation, snr_db, noise_power)
    if sigma2 > 0:
        rng = np.random.default_rng(noise_seed)
        x = x + rng.normal(0.0, np.sqrt(sigma2), size=x.shape)
    return MeasurementRecord(x, record.trajectory, record.excitation, record.periods, snr_db, noise_seed)


def convolution_rows(excitation: ExcitationSignal, n, L: int) -> np.ndarray:
    """Rows ``[s(n), s(n-1), ..., s(n-L+1)]`` with periodic indexing."""
    Lp = excitation.period_length
    n = np.asarray(n)
    return excitation.samples[(n[..., None] - np.arange(L)) % Lp]


@dataclass(frozen=True, eq=False)
class FullSystem:
    """``x = A h`` with ``A = [Phi_1 S, ..., Phi_N S]`` (dense or sparse)."""

    matrix: np.ndarray | sparse.spmatrix
    rhs: np.ndarray | None
    grid: GridSpec
    rir_length: int

    @property
    def shape(self):
        return self.matrix.shape


def _check_periods(traj, excitation, R):
    Lp = excitation.period_length
    if R < 1 or traj.sample_count != R * Lp:
        raise ValueError(
            f"M_t={traj.sample_count} is not R * L_p = {R} * {Lp}; trajectory and excitation disagree"
        )


def assemble_full(
    traj: Trajectory,
    excitation: ExcitationSignal,
    R: int,
    kernel: InterpolationKernel,
    grid: GridSpec,
    L: int,
    samples=None,
    as_sparse: bool = False,
    size_limit: int = FULL_SIZE_LIMIT,
) -> FullSystem:
    """Materialize the full ``M x N L`` system matrix.

    Column ``u * L + k`` holds ``phi_u(r(n)) * s(n - k)``. Dense matrices
    above ``size_limit`` entries are refused; use the decoupled path.
    """
    _check_periods(traj, excitation, R)
    if not 1 <= L <= excitation.period_length:
        raise ValueError(f"RIR length L={L} must lie in [1, L_p={excitation.period_length}]")
    M_t, Q = traj.sample_count, traj.mic_count
    M, N = M_t * Q, grid.size
    idx, val = stencils(kernel, grid, traj.positions.reshape(-1, 3))
    n_of_row = np.repeat(np.arange(M_t), Q)
    S_rows = convolution_rows(excitation, n_of_row, L)  # (M, L)
    rhs = None if samples is None else np.asarray(samples, dtype=float).reshape(-1)
    if rhs is not None and rhs.size != M:
        raise ValueError(f"rhs has {rhs.size} entries, expected {M}")
    if as_sparse:
        K = idx.shape[1]
        nz = val != 0
        rows = np.repeat(np.arange(M), K).reshape(M, K)[nz]
        cols_base = idx[nz] * L
        data = val[nz][:, None] * S_rows[rows]
        cols = cols_base[:, None] + np.arange(L)
        A = sparse.csr_matrix(
            (data.ravel(), (np.repeat(rows, L), cols.ravel())), shape=(M, N * L)
        )
        return FullSystem(A, rhs, grid, L)
    if M * N * L > size_limit:
        raise MemoryError(
            f"full system would have {M * N * L:.3g} entries (limit {size_limit:.3g}); "
            "use the decoupled solver"
        )
    W = weight_matrix(kernel, grid, traj.positions.reshape(-1, 3)).toarray()
    A = (W[:, :, None] * S_rows[:, None, :]).reshape(M, N * L)
    return FullSystem(A, rhs, grid, L)


@dataclass(frozen=True, eq=False)
class DecoupledSystem:
    """``L_p`` independent blocks ``x_l = A_l h~_l``.

    Block ``l`` row ``i * Q + q`` is ``gamma * phi(r(i L_p + l, q), r_g)``,
    kept as sparse stencils: ``indices``/``values`` of shape
    ``(L_p, R Q, K)``.
    """

    indices: np.ndarray
    values: np.ndarray
    rhs: np.ndarray | None  # (L_p, R Q)
    gamma: float
    grid: GridSpec
    rir_length: int

    @property
    def block_count(self) -> int:
        return self.indices.shape[0]

    @property
    def rows_per_block(self) -> int:
        return self.indices.shape[1]

    def block(self, ell: int) -> np.ndarray:
        """Dense ``R Q x N`` matrix of block ``ell``."""
        return self.blocks(slice(ell, ell + 1))[0]

    def blocks(self, sl: slice = slice(None)) -> np.ndarray:
        idx = self.indices[sl]
        val = self.values[sl]
        B, RQ, K = idx.shape
        out = np.zeros((B, RQ, self.grid.size))
        b = np.arange(B)[:, None, None]
        r = np.arange(RQ)[None, :, None]
        np.add.at(out, (np.broadcast_to(b, idx.shape), np.broadcast_to(r, idx.shape), idx), val)
        return out

    def stencil_is_one_hot(self) -> bool:
        nz = np.count_nonzero(self.values, axis=2)
        return bool(np.all(nz == 1))


def assemble_decoupled(
    traj: Trajectory,
    excitation: ExcitationSignal,
    R: int,
    kernel: InterpolationKernel,
    grid: GridSpec,
    samples=None,
    rir_length: int | None = None,
) -> DecoupledSystem:
    """Time-decoupled blocks built straight from interpolation stencils."""
    Lp = excitation.period_length
    if traj.sample_count % Lp:
        raise ValueError(f"M_t={traj.sample_count} is not a multiple of L_p={Lp}")
    _check_periods(traj, excitation, R)
    if not excitation.is_perfect:
        warnings.warn(
            "excitation is not a perfect sequence; block entries gamma*phi describe the "
            "circularly convolved RIRs, which solve_decoupled inverts exactly",
            ImperfectSequenceWarning,
            stacklevel=2,
        )
    Q = traj.mic_count
    idx, val = stencils(kernel, grid, traj.positions.reshape(-1, 3))
    K = idx.shape[1]
    gamma = excitation.gamma
    # (R, L_p, Q, K) -> (L_p, R, Q, K)
    idx = idx.reshape(R, Lp, Q, K).transpose(1, 0, 2, 3).reshape(Lp, R * Q, K)
    val = gamma * val.reshape(R, Lp, Q, K).transpose(1, 0, 2, 3).reshape(Lp, R * Q, K)
    rhs = None
    if samples is not None:
        x = np.asarray(samples, dtype=float).reshape(R, Lp, Q)
        rhs = x.transpose(1, 0, 2).reshape(Lp, R * Q)
    L = Lp if rir_length is None else int(rir_length)
    if not 1 <= L <= Lp:
        raise ValueError(f"RIR length L={L} must lie in [1, L_p={Lp}]")
    return DecoupledSystem(idx, val, rhs, gamma, grid, L)


def save_measurement(record: MeasurementRecord, path, extra: dict | None = None) -> Path:
    """Write ``n,q,x`` CSV plus a ``key=value`` sidecar (``<path>.meta``)."""
    path = Path(path)
    M_t, Q = record.samples.shape
    with path.open("w") as fh:
        fh.write("n,q,x\n")
        for n in range(M_t):
            for q in range(Q):
                fh.write(f"{n},{q},{float(record.samples[n, q])!r}\n")
    meta = {
        "periods": record.periods,
        "snr_db": "none" if record.snr_db is None else repr(float(record.snr_db)),
        "noise_seed": "none" if record.noise_seed is None else record.noise_seed,
        "excitation_kind": record.excitation.kind.value,
        "period_length": record.excitation.period_length,
        "excitation_power": repr(record.excitation.power),
        "samples": M_t,
        "mics": Q,
    }
    meta.update(extra or {})
    meta_path = path.with_name(path.name + ".meta")
    meta_path.write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return meta_path


def read_meta(path) -> dict:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def load_measurement(path, trajectory: Trajectory, excitation: ExcitationSignal) -> MeasurementRecord:
    """Read a measurement CSV; trajectory and excitation come from their own files."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"measurement file {path} does not exist")
    meta_path = path.with_name(path.name + ".meta")
    meta = read_meta(meta_path) if meta_path.exists() else {}
    raw = path.read_text().splitlines()
    if not raw or raw[0].strip() != "n,q,x":
        raise ValueError(f"{path}:1: expected header 'n,q,x'")
    M_t, Q = trajectory.positions.shape[:2]
    x = np.full((M_t, Q), np.nan)
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            n, q, v = int(parts[0]), int(parts[1]), float(parts[2])
            x[n, q] = v
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: malformed row {line!r}") from None
    if np.isnan(x).any():
        raise ValueError(f"{path}: measurement does not cover every (n, q) of the trajectory")
    R = int(meta.get("periods", M_t // excitation.period_length))
    snr = meta.get("snr_db", "none")
    seed = meta.get("noise_seed", "none")
    return MeasurementRecord(
        x,
        trajectory,
        excitation,
        R,
        None if snr == "none" else float(snr),
        None if seed == "none" else int(seed),
    )
