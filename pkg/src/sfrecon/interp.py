"""Separable spatial interpolation weights on a uniform grid."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import GridSpec

_SNAP = 1e-9  # grid units

__all__ = [
    "KernelKind",
    "InterpolationKernel",
    "WeightStencil",
    "axis_weights",
    "weights",
    "weight_matrix",
    "stencils",
]


class KernelKind(str, enum.Enum):
    LINEAR = "linear"
    LAGRANGE = "lagrange"


@dataclass(frozen=True)
class InterpolationKernel:
    """``max_degree`` is the per-axis polynomial degree cap (Lagrange only)."""

    kind: KernelKind = KernelKind.LINEAR
    max_degree: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")

    @classmethod
    def linear(cls):
        return cls(KernelKind.LINEAR, 1)

    @classmethod
    def lagrange(cls, max_degree=19):
        return cls(KernelKind.LAGRANGE, max_degree)


@dataclass(frozen=True, eq=False)
class WeightStencil:
    indices: np.ndarray
    weights: np.ndarray

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.weights.tolist()))

    def sum_of_squares(self) -> float:
        return float(np.sum(self.weights**2))


def _lagrange_basis(t, nodes):
    """Lagrange basis values at ``t`` (shape (P,)) for equispaced node sets (P, K).

    Barycentric form with weights ``(-1)**j * C(K-1, j)``; normalizing by the
    sum keeps the partition of unity at rounding level for high degrees.
    """
    P, K = nodes.shape
    lam = np.array([(-1) ** j * math.comb(K - 1, j) for j in range(K)], dtype=float)
    diff = t[:, None] - nodes
    hit = np.abs(diff) < 1e-13
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = lam / diff
        out = terms / terms.sum(axis=1, keepdims=True)
    on_node = hit.any(axis=1)
    out[on_node] = hit[on_node].astype(float)
    return out


def axis_weights(t, n, kernel: InterpolationKernel):
    """1-D weights for grid coordinates ``t`` on an axis of ``n`` nodes.

    Returns ``(start, w)``: node ``start[p] + j`` gets weight ``w[p, j]``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if n == 1:
        return np.zeros(t.size, dtype=int), np.ones((t.size, 1))
    if kernel.kind is KernelKind.LINEAR:
        d = 1
    else:
        d = min(kernel.max_degree, n - 1)
    if d % 2:
        start = np.floor(t).astype(int) - (d - 1) // 2
    else:
        start = np.rint(t).astype(int) - d // 2
    start = np.clip(start, 0, n - 1 - d)
    nodes = start[:, None] + np.arange(d + 1)[None, :]
    if d == 1:
        f = t - start
        w = np.stack([1.0 - f, f], axis=1)
    else:
        w = _lagrange_basis(t, nodes.astype(float))
        # push the rounding residual of sum(w) into the largest weight
        big = np.argmax(np.abs(w), axis=1)
        resid = np.array([1.0 - math.fsum(row) for row in w])
        w[np.arange(len(w)), big] += resid
    return start, w


def stencils(kernel: InterpolationKernel, grid: GridSpec, positions, tol: float = 1e-9):
    """Dense stencil arrays for many positions.

    Returns ``(indices, values)`` of shape ``(P, K)``; entries that do not
    touch the grid carry weight 0 (and index 0).
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    inside = grid.contains(pos, tol)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)[0]
        raise ValueError(f"position {pos[bad].tolist()} lies outside the grid hull (no extrapolation)")
    t = np.clip(grid.to_grid_coords(pos), 0, np.array(grid.shape) - 1)
    # origin + spacing * g rarely maps back to an exact integer
    near = np.rint(t)
    t = np.where(np.abs(t - near) < _SNAP, near, t)
    per_axis = [axis_weights(t[:, a], grid.shape[a], kernel) for a in range(3)]
    (sx, wx), (sy, wy), (sz, wz) = per_axis
    kx, ky, kz = wx.shape[1], wy.shape[1], wz.shape[1]
    X, Y, _ = grid.shape
    gx = sx[:, None] + np.arange(kx)
    gy = sy[:, None] + np.arange(ky)
    gz = sz[:, None] + np.arange(kz)
    idx = (
        gx[:, None, None, :]
        + X * (gy[:, None, :, None] + Y * gz[:, :, None, None])
    ).reshape(len(pos), -1)
    val = (wz[:, :, None, None] * wy[:, None, :, None] * wx[:, None, None, :]).reshape(len(pos), -1)
    return idx, val


def weights(kernel: InterpolationKernel, grid: GridSpec, position) -> WeightStencil:
    """Interpolation stencil coupling ``position`` to grid RIRs.

    Zero weights are dropped, so a grid node yields the one-entry stencil
    ``{u: 1.0}``.
    """
    idx, val = stencils(kernel, grid, np.asarray(position, dtype=float).reshape(1, 3))
    keep = val[0] != 0
    return WeightStencil(idx[0][keep], val[0][keep])


def weight_matrix(kernel: InterpolationKernel, grid: GridSpec, positions) -> sparse.csr_matrix:
    """Sparse ``(P, N)`` matrix of interpolation weights."""
    idx, val = stencils(kernel, grid, positions)
    P, K = idx.shape
    rows = np.repeat(np.arange(P), K)
    W = sparse.csr_matrix((val.ravel(), (rows, idx.ravel())), shape=(P, grid.size))
    W.eliminate_zeros()
    return W
