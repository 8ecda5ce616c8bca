"""Periodic excitation signals: maximum-length sequences and flat-spectrum
perfect sequences.

All autocorrelations in this package use the *unnormalized* periodic
convention ``r(m) = sum_n s(n) s((n + m) mod L)``, so a perfect sequence of
power ``p`` has ``r(0) = L * p`` and ``r(m) = 0`` elsewhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ExcitationKind",
    "ExcitationSignal",
    "MLS_TAPS",
    "generate_mls",
    "generate_flat_spectrum",
    "periodic_autocorrelation",
    "save_excitation",
    "load_excitation",
]

# One primitive polynomial per register length, given as 1-based tap
# positions of a Fibonacci LFSR (x^m + ... + 1).
MLS_TAPS: dict[int, tuple[int, ...]] = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 5, 3, 1),
    15: (15, 14),
    16: (16, 15, 13, 4),
    17: (17, 14),
    18: (18, 11),
    19: (19, 6, 2, 1),
    20: (20, 17),
    21: (21, 19),
    22: (22, 21),
    23: (23, 18),
    24: (24, 23, 22, 17),
}


class ExcitationKind(str, enum.Enum):
    MLS = "MLS"
    FLAT = "FlatSpectrum"
    CUSTOM = "Custom"


@dataclass(frozen=True, eq=False)
class ExcitationSignal:
    """One period of a periodic excitation.

    ``CUSTOM`` signals (e.g. loaded from disk) skip the MLS structure check
    and may have zero power.
    """

    samples: np.ndarray
    power: float
    kind: ExcitationKind = ExcitationKind.CUSTOM

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).ravel()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "kind", ExcitationKind(self.kind))
        object.__setattr__(self, "power", float(self.power))
        if s.size < 2:
            raise ValueError("excitation period must have at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("excitation samples must be finite")
        measured = float(np.mean(s * s))
        if self.kind is ExcitationKind.CUSTOM:
            if self.power < 0:
                raise ValueError("power must be non-negative")
        elif self.power <= 0:
            raise ValueError("power must be positive")
        if abs(measured - self.power) > 1e-9 * max(self.power, 1e-300):
            raise ValueError(
                f"sample power {measured!r} does not match declared power {self.power!r}"
            )
        if self.kind is ExcitationKind.MLS:
            m = int(round(np.log2(s.size + 1)))
            if 2**m - 1 != s.size or m < 2:
                raise ValueError("MLS period must be 2^m - 1 with m >= 2")
            amp = np.sqrt(self.power)
            if not np.allclose(np.abs(s), amp, rtol=1e-12, atol=0):
                raise ValueError("MLS samples must all be +/- sqrt(power)")

    @property
    def period_length(self) -> int:
        return int(self.samples.size)

    @property
    def gamma(self) -> float:
        """Lag-zero autocorrelation ``L_p * power``."""
        return self.period_length * self.power

    @property
    def is_perfect(self) -> bool:
        return self.kind is ExcitationKind.FLAT

    def spectrum(self) -> np.ndarray:
        return np.fft.fft(self.samples)


def _lfsr_bits(order: int) -> np.ndarray:
    taps = MLS_TAPS[order]
    state = [1] * order
    n = 2**order - 1
    out = np.empty(n, dtype=np.int8)
    for i in range(n):
        out[i] = state[-1]
        fb = 0
        for t in taps:
            fb ^= state[t - 1]
        state = [fb] + state[:-1]
    return out


def generate_mls(order: int, power: float = 1.0) -> ExcitationSignal:
    """Binary maximum-length sequence of period ``2**order - 1``.

    The register is seeded with all ones; bit ``b`` maps to
    ``(-1)**b * sqrt(power)``.
    """
    lo, hi = min(MLS_TAPS), max(MLS_TAPS)
    if not isinstance(order, (int, np.integer)) or not lo <= order <= hi:
        raise ValueError(f"MLS order must be an integer in [{lo}, {hi}], got {order!r}")
    if power <= 0:
        raise ValueError("power must be positive")
    bits = _lfsr_bits(int(order))
    samples = np.sqrt(power) * (1.0 - 2.0 * bits)
    return ExcitationSignal(samples, power, ExcitationKind.MLS)


def generate_flat_spectrum(period: int, power: float = 1.0, seed: int = 0) -> ExcitationSignal:
    """Real sequence with constant DFT magnitude and random phases.

    Its periodic autocorrelation is ``period * power * delta(m)`` up to
    rounding.
    """
    if period < 2:
        raise ValueError(f"period must be >= 2, got {period}")
    if power <= 0:
        raise ValueError("power must be positive")
    rng = np.random.default_rng(seed)
    nbins = period // 2 + 1
    phases = rng.uniform(0.0, 2 * np.pi, nbins)
    spec = np.exp(1j * phases)
    # DC and (for even periods) Nyquist bins must be real
    spec[0] = rng.choice([-1.0, 1.0])
    if period % 2 == 0:
        spec[-1] = rng.choice([-1.0, 1.0])
    spec *= np.sqrt(period * power)
    samples = np.fft.irfft(spec, n=period)
    # remove rounding drift in the power
    samples *= np.sqrt(power / np.mean(samples * samples))
    return ExcitationSignal(samples, power, ExcitationKind.FLAT)


def periodic_autocorrelation(sig: ExcitationSignal | np.ndarray) -> np.ndarray:
    """Unnormalized periodic autocorrelation, ``r[0] = L * power``."""
    s = sig.samples if isinstance(sig, ExcitationSignal) else np.asarray(sig, dtype=float)
    n = s.size
    if n <= 4096:
        # direct sums keep integer-valued sequences exact
        idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
        return s[idx] @ s
    spec = np.fft.rfft(s)
    return np.fft.irfft(spec * np.conj(spec), n=n)


def save_excitation(sig: ExcitationSignal, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# {sig.kind.value},{sig.period_length},{sig.power!r}\n")
        for v in sig.samples:
            fh.write(f"{float(v)!r}\n")


def load_excitation(path) -> ExcitationSignal:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing '# kind,L_p,power' header")
    try:
        kind, lp, power = (p.strip() for p in lines[0][1:].split(","))
        lp = int(lp)
        power = float(power)
    except ValueError as exc:
        raise ValueError(f"{path}:1: malformed header {lines[0]!r}") from exc
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            samples.append(float(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from exc
    if len(samples) != lp:
        raise ValueError(f"{path}: header declares {lp} samples, found {len(samples)}")
    return ExcitationSignal(np.array(samples), power, ExcitationKind(kind))
