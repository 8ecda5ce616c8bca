"""Virtual sampling grid and microphone trajectories."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "Trajectory",
    "nyquist_spacing",
    "gen_grid_snapped",
    "gen_lissajous",
    "gen_static",
    "load_trajectory",
    "save_trajectory",
]


def nyquist_spacing(cutoff: float, speed_of_sound: float = 343.0) -> float:
    """Spatial Nyquist bound ``c0 / (2 fc)``; grid spacings must stay below it."""
    if cutoff <= 0 or speed_of_sound <= 0:
        raise ValueError("cutoff and speed of sound must be positive")
    return speed_of_sound / (2.0 * cutoff)


def _vec3(v, name):
    a = np.array(v, dtype=float).ravel()
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite 3-vector, got {v!r}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Cartesian grid ``origin + spacing * (gx, gy, gz)``.

    Grid points are enumerated with x fastest, then y, then z:
    ``u = gx + X * (gy + Y * gz)``.
    """

    origin: np.ndarray
    spacing: float
    shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin, "origin"))
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"grid extents must be three positive integers, got {self.shape!r}")
        object.__setattr__(self, "shape", shape)
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing!r}")
        object.__setattr__(self, "spacing", float(self.spacing))

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.origin, other.origin)
        )

    def __hash__(self):
        return hash((self.shape, self.spacing, tuple(self.origin)))

    def __repr__(self):
        return f"GridSpec(origin={list(self.origin)}, spacing={self.spacing}, shape={self.shape})"

    @property
    def size(self) -> int:
        X, Y, Z = self.shape
        return X * Y * Z

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.shape) - 1)

    def multi_index(self, u) -> np.ndarray:
        u = np.asarray(u)
        X, Y, _ = self.shape
        return np.stack([u % X, (u // X) % Y, u // (X * Y)], axis=-1)

    def flat_index(self, g) -> np.ndarray:
        g = np.asarray(g)
        X, Y, _ = self.shape
        return g[..., 0] + X * (g[..., 1] + Y * g[..., 2])

    def position(self, u) -> np.ndarray:
        return self.origin + self.spacing * self.multi_index(u)

    def positions(self) -> np.ndarray:
        return self.position(np.arange(self.size))

    def to_grid_coords(self, pos) -> np.ndarray:
        """Positions in units of grid spacing relative to the origin."""
        return (np.asarray(pos, dtype=float) - self.origin) / self.spacing

    def nearest_index(self, pos) -> np.ndarray:
        g = np.rint(self.to_grid_coords(pos)).astype(int)
        g = np.clip(g, 0, np.array(self.shape) - 1)
        return self.flat_index(g)

    def contains(self, pos, tol: float = 1e-9) -> np.ndarray:
        """True where ``pos`` lies in the grid's bounding box (per axis)."""
        t = self.to_grid_coords(pos)
        hi = np.array(self.shape) - 1
        return np.all((t >= -tol) & (t <= hi + tol), axis=-1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-sample microphone positions, shape ``(M_t, Q, 3)``.

    When ``grid_snapped`` is set, ``grid`` is the grid every position lies on.
    """

    positions: np.ndarray
    grid_snapped: bool = False
    grid: GridSpec | None = None

    def __post_init__(self):
        p = np.array(self.positions, dtype=float)
        if p.ndim == 2 and p.shape[1] == 3:
            p = p[:, None, :]
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"positions must have shape (M_t, Q, 3), got {np.shape(self.positions)}")
        if not np.all(np.isfinite(p)):
            raise ValueError("trajectory positions must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)
        if self.grid_snapped:
            if self.grid is None:
                raise ValueError("grid_snapped trajectories need their grid")
            snapped = self.grid.position(self.grid.nearest_index(p))
            if np.max(np.abs(snapped - p)) > 1e-12:
                raise ValueError("grid_snapped trajectory has off-grid positions")

    @property
    def sample_count(self) -> int:
        return self.positions.shape[0]

    @property
    def mic_count(self) -> int:
        return self.positions.shape[1]

    @property
    def equation_count(self) -> int:
        return self.sample_count * self.mic_count

    def node_indices(self) -> np.ndarray:
        """Grid index of every position, shape ``(M_t, Q)`` (snapped only)."""
        if not self.grid_snapped:
            raise ValueError("trajectory is not grid snapped")
        return self.grid.nearest_index(self.positions)


def _rotate_quarter(g: np.ndarray, k: int) -> np.ndarray:
    x, y, z = g[..., 0], g[..., 1], g[..., 2]
    for _ in range(k % 4):
        x, y = -y, x
    return np.stack([x, y, z], axis=-1)


def _array_poses(shape, Q):
    """All placements of the Q-microphone array on the grid.

    The array is the first Q grid points in canonical order. A pose is a
    quarter-turn rotation in the xy plane followed by an integer shift that
    keeps every microphone on the grid.
    """
    X, Y, Z = shape
    u = np.arange(Q)
    base = np.stack([u % X, (u // X) % Y, u // (X * Y)], axis=-1)
    dims = np.array(shape)
    poses = []
    seen = set()
    for k in range(4):
        rot = _rotate_quarter(base, k)
        lo = rot.min(axis=0)
        hi = rot.max(axis=0)
        ranges = [range(-lo[a], dims[a] - hi[a]) for a in range(3)]
        for shift in itertools.product(*ranges):
            pose = rot + np.array(shift)
            key = pose.tobytes()
            if key not in seen:
                seen.add(key)
                poses.append(pose)
    return np.array(poses)


def _balanced_poses(flat_poses, N, count, rng):
    """Pick ``count`` poses so that grid-point coverage stays as even as possible."""
    cover = np.zeros(N)
    chosen = []
    members = np.zeros((len(flat_poses), N))
    for i, p in enumerate(flat_poses):
        members[i, p] = 1.0
    for _ in range(count):
        # increase of sum(cover^2) when adding each pose
        cost = members @ (2 * cover + 1)
        best = np.flatnonzero(cost <= cost.min() + 1e-9)
        pick = rng.choice(best)
        chosen.append(pick)
        cover += members[pick]
    return np.array(chosen)


def gen_grid_snapped(
    grid: GridSpec, Q: int, steps: int, seed: int = 0, period: int | None = None
) -> Trajectory:
    """Rigid Q-microphone array moved over the grid by quarter turns and shifts.

    Without ``period`` a fresh uniformly random pose is drawn for every time
    sample. With ``period`` the poses that share a phase ``n mod period``
    are chosen to cover the grid as evenly as possible (each phase block of
    the time-decoupled system then has full rank when ``Q * steps/period >= N``),
    and their order across periods is random.
    """
    N = grid.size
    if not 1 <= Q <= N:
        raise ValueError(f"Q={Q} microphones do not fit on a grid of {N} points")
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = np.random.default_rng(seed)
    poses = _array_poses(grid.shape, Q)
    flat = grid.flat_index(poses)
    if period is None:
        pick = rng.integers(0, len(poses), size=steps)
    else:
        if steps % period:
            raise ValueError(f"steps={steps} is not a multiple of period={period}")
        R = steps // period
        pick = np.empty(steps, dtype=int)
        for ell in range(period):
            chosen = _balanced_poses(flat, N, R, rng)
            pick[ell::period] = rng.permutation(chosen)
    pos = grid.position(flat[pick])
    return Trajectory(pos, grid_snapped=True, grid=grid)


def gen_static(grid: GridSpec, steps: int, nodes=None) -> Trajectory:
    """Microphones held still on grid nodes (all nodes by default)."""
    nodes = np.arange(grid.size) if nodes is None else np.asarray(nodes, dtype=int)
    pos = np.broadcast_to(grid.position(nodes), (steps, nodes.size, 3))
    return Trajectory(pos, grid_snapped=True, grid=grid)


def gen_lissajous(
    grid: GridSpec, ratio_num: int, ratio_den: int, M_t: int, margin: float = 0.0
) -> Trajectory:
    """Single-microphone Lissajous curve in the grid's z = origin plane.

    ``r(n) = c + a * [sin(2 pi p n / M_t + pi/2), sin(2 pi q n / M_t), 0]``
    with ``c`` the box centre and ``a`` half the box extent minus ``margin``.
    """
    if M_t < 2:
        raise ValueError("M_t must be at least 2")
    lo, hi = grid.lower, grid.upper
    center = 0.5 * (lo + hi)
    amp = 0.5 * (hi - lo) - margin
    if np.any(amp[:2] < 0):
        raise ValueError("margin exceeds half the grid extent")
    n = np.arange(M_t)
    x = np.sin(2 * np.pi * ratio_num * n / M_t + np.pi / 2)
    y = np.sin(2 * np.pi * ratio_den * n / M_t)
    pos = np.empty((M_t, 3))
    pos[:, 0] = center[0] + amp[0] * x
    pos[:, 1] = center[1] + amp[1] * y
    pos[:, 2] = lo[2]
    # keep rounding from leaving the hull
    np.clip(pos, lo, hi, out=pos)
    return Trajectory(pos[:, None, :])


def save_trajectory(traj: Trajectory, path) -> None:
    M_t, Q, _ = traj.positions.shape
    n = np.repeat(np.arange(M_t), Q)
    q = np.tile(np.arange(Q), M_t)
    flat = traj.positions.reshape(-1, 3)
    with Path(path).open("w") as fh:
        fh.write("n,mic,x,y,z\n")
        for row in zip(n.tolist(), q.tolist(), *flat.T.tolist()):
            fh.write(f"{row[0]},{row[1]},{row[2]!r},{row[3]!r},{row[4]!r}\n")


def load_trajectory(path) -> Trajectory:
    """Read the ``n,mic,x,y,z`` CSV written by :func:`save_trajectory`."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty trajectory file")
        if [h.strip() for h in header] != ["n", "mic", "x", "y", "z"]:
            raise ValueError(f"{path}:1: expected header 'n,mic,x,y,z', got {','.join(header)!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                if len(rec) != 5:
                    raise ValueError
                rows.append((int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]), float(rec[4])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {','.join(rec)!r}") from None
    if not rows:
        raise ValueError(f"{path}: trajectory has no samples")
    n = np.array([r[0] for r in rows])
    q = np.array([r[1] for r in rows])
    M_t, Q = n.max() + 1, q.max() + 1
    if n.min() < 0 or q.min() < 0 or len(rows) != M_t * Q:
        raise ValueError(f"{path}: rows do not form a complete (n, mic) table")
    pos = np.full((M_t, Q, 3), np.nan)
    pos[n, q] = np.array([r[2:] for r in rows])
    if np.isnan(pos).any():
        raise ValueError(f"{path}: duplicate (n, mic) rows")
    return Trajectory(pos)
