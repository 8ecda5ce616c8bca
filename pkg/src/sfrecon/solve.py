"""Grid RIR recovery from assembled systems.

The decoupled path estimates, for every grid point ``u``, the circular
convolution ``y_u = s (*) h_u`` one phase at a time and then maps ``y_u``
back to an ``L``-tap RIR. That back-transform is a least-squares fit of the
``L`` taps to the ``L_p`` phase estimates. For ``L = L_p`` it is exact
circulant inversion; for a perfect sequence with uniform phase weights it
reduces to correlation followed by truncation. Weighting each phase by the
block's normal-matrix diagonal makes grid-snapped decoupled solutions equal
the full least-squares solution.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import lsqr

from .geometry import GridSpec
from .room import RirSet
from .signals import ExcitationSignal
from .system import DecoupledSystem, FullSystem, MeasurementRecord

__all__ = [
    "SolverMethod",
    "SolverConfig",
    "SolveResult",
    "RankDeficientError",
    "solve_full",
    "solve_decoupled",
    "static_deconvolve",
    "back_transform",
    "estimate_sigma_h2",
]

log = logging.getLogger(__name__)


class RankDeficientError(np.linalg.LinAlgError):
    """Least-squares system without full column rank."""

    def __init__(self, msg, block=None, rank=None, unknowns=None):
        super().__init__(msg)
        self.block = block
        self.rank = rank
        self.unknowns = unknowns


class SolverMethod(str, enum.Enum):
    FULL = "full"
    DECOUPLED = "decoupled"
    RIDGE = "ridge"


@dataclass(frozen=True)
class SolverConfig:
    """``ridge_lambda = noise_power / sigma_h2`` gives the MMSE estimator.

    ``iterative`` switches :func:`solve_full` to LSQR; ``back_transform`` is
    ``"fit"`` (least-squares onto ``L`` taps) or ``"truncate"`` (invert the
    whole period, keep the first ``L`` taps).
    """

    method: SolverMethod = SolverMethod.DECOUPLED
    ridge_lambda: float = 0.0
    rank_tolerance: float = 1e-10
    iterative: bool = False
    back_transform: str = "fit"

    def __post_init__(self):
        object.__setattr__(self, "method", SolverMethod(self.method))
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        if not self.rank_tolerance > 0:
            raise ValueError("rank_tolerance must be positive")
        if self.back_transform not in ("fit", "truncate"):
            raise ValueError("back_transform must be 'fit' or 'truncate'")

    @property
    def regularized(self) -> bool:
        return self.method is SolverMethod.RIDGE


@dataclass(frozen=True, eq=False)
class SolveResult:
    rirs: RirSet
    residual_norm: float
    rank: int
    unknowns: int
    block_ranks: np.ndarray | None = None
    block_conditions: np.ndarray | None = None
    tail_energy: float = 0.0
    extra: dict = field(default_factory=dict)

    def diagnostics_rows(self):
        """``(metric, value, unit)`` rows for the diagnostics CSV."""
        rows = [
            ("residual_norm", self.residual_norm, ""),
            ("rank", self.rank, ""),
            ("unknowns", self.unknowns, ""),
            ("tail_energy", self.tail_energy, "relative"),
        ]
        if self.block_conditions is not None:
            rows.append(("max_block_condition", float(np.max(self.block_conditions)), ""))
            rows.append(("min_block_rank", int(np.min(self.block_ranks)), ""))
        rows.extend((k, v, "") for k, v in self.extra.items())
        return rows


def estimate_sigma_h2(x, M: int, period_length: int, power: float) -> float:
    """Prior RIR coefficient variance ``||x||^2 / (M L_p power)``."""
    return float(np.dot(x, x) / (M * period_length * power))


def solve_full(sys: FullSystem, cfg: SolverConfig = SolverConfig(SolverMethod.FULL)) -> SolveResult:
    """Least squares (or ridge) on the full ``M x N L`` system."""
    if sys.rhs is None:
        raise ValueError("system has no measurement vector")
    A, x = sys.matrix, sys.rhs
    M, U = A.shape
    lam = cfg.ridge_lambda if cfg.regularized else 0.0
    if not cfg.regularized and M < U:
        raise RankDeficientError(
            f"underdetermined: {M} equations for {U} unknowns", rank=M, unknowns=U
        )
    if cfg.iterative:
        out = lsqr(A, x, damp=np.sqrt(lam), atol=1e-15, btol=1e-15, conlim=1e12, iter_lim=20 * U)
        h, rank = out[0], U
    else:
        Ad = A.toarray() if sparse.issparse(A) else A
        if lam > 0:
            Ad = np.vstack([Ad, np.sqrt(lam) * np.eye(U)])
            rhs = np.concatenate([x, np.zeros(U)])
        else:
            rhs = x
        h, _, rank, _ = scipy.linalg.lstsq(Ad, rhs, cond=cfg.rank_tolerance, lapack_driver="gelsy")
        if rank < U and not cfg.regularized:
            raise RankDeficientError(
                f"system matrix has rank {rank} < {U} unknowns; "
                "underdetermined recovery is not supported",
                rank=rank,
                unknowns=U,
            )
    resid = float(np.linalg.norm(x - A @ h))
    data = h.reshape(sys.grid.size, sys.rir_length)
    return SolveResult(RirSet(sys.grid, data), resid, int(rank), U)


def _uniform_fit_operator(excitation: ExcitationSignal, L: int) -> np.ndarray:
    """``(C_L^T C_L)^-1 C_L^T`` for the first ``L`` columns of the circulant."""
    Lp = excitation.period_length
    C_L = excitation.samples[(np.arange(Lp)[:, None] - np.arange(L)[None, :]) % Lp]
    G = C_L.T @ C_L
    return scipy.linalg.solve(G, C_L.T, assume_a="pos")


def back_transform(Y, excitation: ExcitationSignal, L: int, weights=None, mode: str = "fit"):
    """Map circular convolutions ``Y`` (``N x L_p``) to ``L``-tap RIRs.

    Returns ``(H, tail_energy)`` where ``tail_energy`` is the fraction of
    the full-period inversion that lies beyond tap ``L``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Lp = excitation.period_length
    spec = np.fft.rfft(excitation.samples)
    if excitation.is_perfect:
        full = np.fft.irfft(np.fft.rfft(Y, axis=1) * np.conj(spec) / excitation.gamma, n=Lp, axis=1)
    else:
        if np.min(np.abs(spec)) < 1e-12 * np.max(np.abs(spec)):
            raise np.linalg.LinAlgError("excitation spectrum has a zero; cannot deconvolve")
        full = np.fft.irfft(np.fft.rfft(Y, axis=1) / spec, n=Lp, axis=1)
    total = float(np.sum(full**2))
    tail = float(np.sum(full[:, L:] ** 2)) / total if total > 0 else 0.0
    if L == Lp or mode == "truncate":
        return full[:, :L], tail
    if weights is None or np.allclose(weights, weights[:, :1]):
        return Y @ _uniform_fit_operator(excitation, L).T, tail
    C_L = excitation.samples[(np.arange(Lp)[:, None] - np.arange(L)[None, :]) % Lp]
    H = np.empty((Y.shape[0], L))
    for u in range(Y.shape[0]):
        w = weights[u]
        G = C_L.T @ (w[:, None] * C_L)
        H[u] = scipy.linalg.solve(G, C_L.T @ (w * Y[u]), assume_a="pos")
    return H, tail


def solve_decoupled(
    sys: DecoupledSystem,
    excitation: ExcitationSignal,
    cfg: SolverConfig = SolverConfig(),
    chunk_entries: int = 20_000_000,
) -> SolveResult:
    """Solve the ``L_p`` phase blocks independently and back-transform."""
    if sys.rhs is None:
        raise ValueError("system has no measurement vector")
    Lp, RQ = sys.block_count, sys.rows_per_block
    N = sys.grid.size
    if Lp != excitation.period_length:
        raise ValueError("system and excitation have different period lengths")
    lam = cfg.ridge_lambda * sys.gamma if cfg.regularized else 0.0
    if not cfg.regularized and RQ < N:
        raise RankDeficientError(
            f"each block has {RQ} equations for {N} unknowns", rank=RQ, unknowns=N
        )
    Ytil = np.empty((N, Lp))
    weights = np.empty((N, Lp))
    ranks = np.empty(Lp, dtype=int)
    conds = np.empty(Lp)
    resid2 = 0.0
    step = max(1, chunk_entries // max(1, RQ * N))
    for start in range(0, Lp, step):
        sl = slice(start, min(Lp, start + step))
        A = sys.blocks(sl)
        b = sys.rhs[sl]
        weights[:, sl] = np.einsum("brn,brn->nb", A, A)
        U_, s, Vt = np.linalg.svd(A, full_matrices=False)
        smax = s[:, :1]
        keep = s > cfg.rank_tolerance * smax
        ranks[sl] = keep.sum(axis=1)
        with np.errstate(divide="ignore"):
            conds[sl] = np.where(keep.all(axis=1), s[:, 0] / s[:, -1], np.inf)
        if not cfg.regularized and np.any(ranks[sl] < N):
            bad = start + int(np.flatnonzero(ranks[sl] < N)[0])
            raise RankDeficientError(
                f"decoupled block {bad} is singular (rank {ranks[bad]} < {N})",
                block=bad,
                rank=int(ranks[bad]),
                unknowns=N,
            )
        if lam > 0:
            inv_s = s / (s**2 + lam)
        else:
            inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        coef = np.einsum("brk,br->bk", U_, b) * inv_s
        sol = np.einsum("bkn,bk->bn", Vt, coef)
        Ytil[:, sl] = sol.T
        resid2 += float(np.sum((b - np.einsum("brn,bn->br", A, sol)) ** 2))
    Y = sys.gamma * Ytil
    one_hot = sys.stencil_is_one_hot()
    H, tail = back_transform(
        Y, excitation, sys.rir_length, weights if one_hot else None, cfg.back_transform
    )
    return SolveResult(
        RirSet(sys.grid, H),
        float(np.sqrt(resid2)),
        int(ranks.min()),
        N,
        block_ranks=ranks,
        block_conditions=conds,
        tail_energy=tail,
    )


def static_deconvolve(
    record: MeasurementRecord,
    grid: GridSpec,
    L: int,
    mode: str = "fit",
) -> SolveResult:
    """Classical fixed-microphone measurement: period averaging + deconvolution.

    Every microphone must stay on one grid node for the whole record and
    every grid node must be occupied; co-located microphones are averaged.
    """
    traj, exc = record.trajectory, record.excitation
    Lp, R = exc.period_length, record.periods
    if traj.sample_count != R * Lp:
        raise ValueError("record length is not R * L_p")
    if not 1 <= L <= Lp:
        raise ValueError(f"RIR length L={L} must lie in [1, L_p={Lp}]")
    pos = traj.positions
    if np.any(pos != pos[:1]):
        raise ValueError("static deconvolution needs microphones that do not move")
    nodes = grid.nearest_index(pos[0])
    off = np.max(np.abs(grid.position(nodes) - pos[0]), axis=1)
    if np.any(off > 1e-12):
        q = int(np.argmax(off))
        raise ValueError(f"microphone {q} at {pos[0, q].tolist()} is not on a grid node")
    counts = np.bincount(nodes, minlength=grid.size)
    if np.any(counts == 0):
        raise ValueError(f"grid nodes {np.flatnonzero(counts == 0).tolist()} have no microphone")
    avg = record.samples.reshape(R, Lp, -1).mean(axis=0)  # (Lp, Q)
    Y = np.zeros((grid.size, Lp))
    np.add.at(Y, nodes, avg.T)
    Y /= counts[:, None]
    H, tail = back_transform(Y, exc, L, None, mode)
    return SolveResult(RirSet(grid, H), 0.0, grid.size * L, grid.size * L, tail_energy=tail)
