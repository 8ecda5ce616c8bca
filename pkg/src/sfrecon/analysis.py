"""Reconstruction quality and closed-form error prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GridSpec, Trajectory
from .interp import InterpolationKernel, stencils
from .room import RirSet

__all__ = [
    "NoiseModel",
    "MmsePrediction",
    "MmseInstance",
    "EmpiricalMmse",
    "mnsm",
    "mnsm_linear",
    "predict_mmse",
    "mmse_from_matrix",
    "error_covariance_trace",
    "trace_identity_check",
    "empirical_mmse",
    "write_metrics_csv",
    "write_profile_csv",
]


@dataclass(frozen=True)
class NoiseModel:
    sigma_s2: float
    sigma_eta2: float
    sigma_h2: float

    def __post_init__(self):
        if min(self.sigma_s2, self.sigma_eta2, self.sigma_h2) <= 0:
            raise ValueError("all noise model variances must be positive")

    @property
    def snr(self) -> float:
        return self.sigma_s2 / self.sigma_eta2

    @property
    def ridge_lambda(self) -> float:
        return self.sigma_eta2 / self.sigma_h2


def mnsm_linear(truth: RirSet, estimate: RirSet) -> float:
    if truth.data.shape != estimate.data.shape or truth.grid != estimate.grid:
        raise ValueError(
            f"RIR sets differ: {truth.data.shape} on {truth.grid!r} vs "
            f"{estimate.data.shape} on {estimate.grid!r}"
        )
    ref = np.sum(truth.data**2, axis=1)
    if np.any(ref == 0):
        raise ValueError(f"truth row {int(np.flatnonzero(ref == 0)[0])} has zero energy")
    err = np.sum((truth.data - estimate.data) ** 2, axis=1)
    return float(np.mean(err / ref))


def mnsm(truth: RirSet, estimate: RirSet) -> float:
    """Mean normalized system misalignment in dB.

    A perfect reconstruction returns ``-math.inf``.
    """
    lin = mnsm_linear(truth, estimate)
    if lin == 0.0:
        return -math.inf
    return 10.0 * math.log10(lin)


@dataclass(frozen=True, eq=False)
class MmsePrediction:
    total: float
    terms: np.ndarray  # per equation
    sum_sq_weights: np.ndarray  # sum_u phi^2 per equation


def predict_mmse(
    traj: Trajectory,
    kernel: InterpolationKernel,
    grid: GridSpec,
    noise: NoiseModel,
    period_length: int,
) -> MmsePrediction:
    """Closed-form MMSE for a perfect-sequence excitation.

    ``sigma_h2 * sum_n 1 / (1 + (sigma_h2/sigma_eta2) L_p sigma_s2 sum_u phi_u(n)^2)``.
    """
    _, val = stencils(kernel, grid, traj.positions.reshape(-1, 3))
    ssq = np.sum(val**2, axis=1)
    gain = noise.sigma_h2 / noise.sigma_eta2 * period_length * noise.sigma_s2
    terms = noise.sigma_h2 / (1.0 + gain * ssq)
    return MmsePrediction(float(terms.sum()), terms, ssq)


def mmse_from_matrix(A, noise: NoiseModel) -> float:
    """``sigma_h2 tr{(I_M + (sigma_h2/sigma_eta2) A A^T)^-1}``."""
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    K = np.eye(M) + noise.sigma_h2 / noise.sigma_eta2 * (A @ A.T)
    return float(noise.sigma_h2 * np.trace(np.linalg.inv(K)))


def error_covariance_trace(A, noise: NoiseModel) -> float:
    """Trace of the MMSE error covariance ``sigma_h2 (I + k A^T A)^-1``."""
    A = np.asarray(A, dtype=float)
    U = A.shape[1]
    K = np.eye(U) + noise.sigma_h2 / noise.sigma_eta2 * (A.T @ A)
    return float(noise.sigma_h2 * np.trace(np.linalg.inv(K)))


def trace_identity_check(B, C) -> tuple[float, float]:
    """Both sides of ``tr{(I_S + B C^T)^-1} = tr{(I_W + C^T B)^-1} - (W - S)``."""
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if B.shape != C.shape or B.ndim != 2:
        raise ValueError("B and C must be matrices of the same shape")
    S, W = B.shape
    left = np.eye(S) + B @ C.T
    right = np.eye(W) + C.T @ B
    for name, m in (("I + B C^T", left), ("I + C^T B", right)):
        if np.linalg.cond(m) > 1e14:
            raise np.linalg.LinAlgError(f"{name} is singular")
    lhs = float(np.trace(np.linalg.inv(left)))
    rhs = float(np.trace(np.linalg.inv(right)) - (W - S))
    return lhs, rhs


@dataclass(frozen=True, eq=False)
class MmseInstance:
    """A linear model ``x = A h + eta`` with Gaussian prior and noise."""

    matrix: np.ndarray
    noise: NoiseModel


@dataclass(frozen=True)
class EmpiricalMmse:
    mean: float
    stderr: float
    trials: int


def empirical_mmse(instance, trials: int, seed: int = 0, batch: int = 4096) -> EmpiricalMmse:
    """Monte Carlo total squared error of the ridge/MMSE estimator.

    ``instance`` is an :class:`MmseInstance` or a callable ``rng -> MmseInstance``
    (called once per trial, for random designs).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    errs = np.empty(trials)
    if isinstance(instance, MmseInstance):
        A = np.asarray(instance.matrix, dtype=float)
        nm = instance.noise
        U = A.shape[1]
        G = np.linalg.solve(A.T @ A + nm.ridge_lambda * np.eye(U), A.T)
        done = 0
        while done < trials:
            b = min(batch, trials - done)
            h = rng.normal(0, np.sqrt(nm.sigma_h2), (b, U))
            eta = rng.normal(0, np.sqrt(nm.sigma_eta2), (b, A.shape[0]))
            x = h @ A.T + eta
            errs[done : done + b] = np.sum((x @ G.T - h) ** 2, axis=1)
            done += b
    else:
        for t in range(trials):
            inst = instance(rng)
            errs[t] = empirical_mmse(inst, 1, int(rng.integers(2**63))).mean
    return EmpiricalMmse(float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(trials)) if trials > 1 else math.inf, trials)


def write_metrics_csv(rows, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("metric,value,unit\n")
        for metric, value, unit in rows:
            if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
                text = str(int(value))
            elif isinstance(value, (float, np.floating)):
                text = repr(float(value))
            else:
                text = str(value)
            fh.write(f"{metric},{text},{unit}\n")


def write_profile_csv(pred: MmsePrediction, path, mic_count: int = 1) -> None:
    """Per-equation ``sum phi^2`` and MMSE term, for plotting."""
    with Path(path).open("w") as fh:
        fh.write("n,q,sum_phi2,mmse_term\n")
        for i, (s, t) in enumerate(zip(pred.sum_sq_weights, pred.terms)):
            fh.write(f"{i // mic_count},{i % mic_count},{float(s)!r},{float(t)!r}\n")
