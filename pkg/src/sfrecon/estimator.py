"""Estimator wrapper around dynamic sound-field reconstruction.

``fit`` takes microphone positions and the samples they recorded and
recovers grid RIRs; ``predict`` evaluates the recovered field at arbitrary
positions inside the grid by the same interpolation kernel.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points, check_positions, check_samples
from .geometry import GridSpec, Trajectory
from .interp import InterpolationKernel, KernelKind, weight_matrix
from .signals import ExcitationSignal
from .solve import SolverConfig, SolverMethod, solve_decoupled, solve_full
from .system import assemble_decoupled, assemble_full

__all__ = ["DynamicFieldEstimator"]


class DynamicFieldEstimator(BaseEstimator):
    """Recover RIRs on a virtual grid from a moving-microphone recording.

    Parameters
    ----------
    grid : GridSpec
    excitation : ExcitationSignal
        Periodic excitation played during the recording.
    rir_length : int, optional
        RIR taps to recover; defaults to the period length.
    kernel : {"linear", "lagrange"}
    max_degree : int
        Per-axis degree cap for the Lagrange kernel.
    method : {"decoupled", "full", "ridge"}
    ridge_lambda : float
        Ridge weight, used when ``method="ridge"``.
    rank_tolerance : float
    back_transform : {"fit", "truncate"}
    """

    def __init__(
        self,
        grid: GridSpec | None = None,
        excitation: ExcitationSignal | None = None,
        rir_length: int | None = None,
        kernel: str = "linear",
        max_degree: int = 19,
        method: str = "decoupled",
        ridge_lambda: float = 0.0,
        rank_tolerance: float = 1e-10,
        back_transform: str = "fit",
    ):
        self.grid = grid
        self.excitation = excitation
        self.rir_length = rir_length
        self.kernel = kernel
        self.max_degree = max_degree
        self.method = method
        self.ridge_lambda = ridge_lambda
        self.rank_tolerance = rank_tolerance
        self.back_transform = back_transform

    def _kernel(self) -> InterpolationKernel:
        kind = KernelKind(self.kernel)
        return InterpolationKernel(kind, 1 if kind is KernelKind.LINEAR else self.max_degree)

    def _config(self) -> SolverConfig:
        return SolverConfig(
            SolverMethod(self.method), self.ridge_lambda, self.rank_tolerance, False, self.back_transform
        )

    def fit(self, X, y):
        """``X``: positions ``(M_t, Q, 3)``; ``y``: samples ``(M_t, Q)``."""
        if not isinstance(self.grid, GridSpec):
            raise ValueError("grid must be a GridSpec")
        if not isinstance(self.excitation, ExcitationSignal):
            raise ValueError("excitation must be an ExcitationSignal")
        pos = check_positions(X)
        x = check_samples(y, pos.shape[:2])
        Lp = self.excitation.period_length
        if pos.shape[0] % Lp:
            raise ValueError(f"{pos.shape[0]} samples is not a whole number of periods (L_p={Lp})")
        R = pos.shape[0] // Lp
        L = Lp if self.rir_length is None else int(self.rir_length)
        kernel, cfg = self._kernel(), self._config()
        traj = Trajectory(pos)
        if cfg.method is SolverMethod.FULL:
            sys = assemble_full(traj, self.excitation, R, kernel, self.grid, L, x)
            result = solve_full(sys, cfg)
        else:
            sys = assemble_decoupled(traj, self.excitation, R, kernel, self.grid, x, L)
            result = solve_decoupled(sys, self.excitation, cfg)
        self.result_ = result
        self.rirs_ = result.rirs
        self.periods_ = R
        return self

    def predict(self, X):
        """RIRs at query positions ``(P, 3)``, shape ``(P, L)``."""
        check_is_fitted(self, "rirs_")
        pts = check_points(X)
        W = weight_matrix(self._kernel(), self.grid, pts)
        return np.asarray(W @ self.rirs_.data)

    def score(self, X, y):
        """Negative mean normalized misalignment (dB) of ``predict(X)`` against ``y``."""
        est = self.predict(X)
        ref = check_samples(y, est.shape)
        energy = np.sum(ref**2, axis=1)
        if np.any(energy == 0):
            raise ValueError("reference RIRs must have nonzero energy")
        lin = float(np.mean(np.sum((ref - est) ** 2, axis=1) / energy))
        return np.inf if lin == 0 else -10.0 * np.log10(lin)

