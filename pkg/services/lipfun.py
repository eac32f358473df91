# services/lipfun.py
"""
Grid-sampled Lipschitz functions.

A GridFunction is the working stand-in for a τ-Lipschitz map on a box
in R^k: values on a rectangular grid plus the Lipschitz budget the
producer declares for them. Every claim about a true function becomes a
claim about the samples, with an explicit `slack` for the part lost to
discretization.
"""
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import cdist

from services.errors import GridMismatchError, PreconditionError

# All-pairs estimation is exact up to this many points; above it we fall
# back to axis neighbours plus seeded random pairs.
ALL_PAIRS_LIMIT = 4096
RANDOM_PAIRS = 100_000
DEFAULT_M_MAX = 20

_BLOCK = 512
_COVER_TOL = 1e-12


# ---------- Grids ----------
@dataclass(frozen=True)
class GridSpec:
    k: int
    origin: Tuple[float, ...]
    extent: Tuple[float, ...]
    points_per_axis: Tuple[int, ...]

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        ppa = tuple(int(n) for n in np.atleast_1d(self.points_per_axis))
        if self.k < 1:
            raise PreconditionError("grid dimension must be positive")
        if not (len(origin) == len(extent) == len(ppa) == self.k):
            raise PreconditionError("origin, extent and points_per_axis must all have length k")
        if any(n < 2 for n in ppa):
            raise PreconditionError("degenerate grid")
        if any(not (e > 0.0) for e in extent):
            raise PreconditionError("grid extent must be positive on every axis")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "points_per_axis", ppa)

    @classmethod
    def cube(cls, k: int, a: float, n: int) -> "GridSpec":
        """[0,a]^k with n points per axis."""
        return cls(k, (0.0,) * k, (float(a),) * k, (int(n),) * k)

    @classmethod
    def symmetric(cls, k: int, radius: float, n: int) -> "GridSpec":
        """[-radius, radius]^k with n points per axis."""
        return cls(k, (-float(radius),) * k, (2.0 * float(radius),) * k, (int(n),) * k)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.points_per_axis

    @property
    def count(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.extent) / (np.asarray(self.points_per_axis) - 1)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.extent)

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(o, o + e, n) for o, e, n in zip(self.origin, self.extent, self.points_per_axis)]

    def points(self) -> np.ndarray:
        """All grid points, shape (count, k), row-major (last axis fastest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def covers(self, lo: Sequence[float], hi: Sequence[float]) -> bool:
        return bool(np.all(self.lower <= np.asarray(lo) + _COVER_TOL) and np.all(self.upper >= np.asarray(hi) - _COVER_TOL))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: GridSpec
    values: np.ndarray
    tau: float
    slack: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.count:
            raise PreconditionError(f"values length {vals.size} does not match grid point count {self.grid.count}")
        if self.tau < 0 or self.slack < 0:
            raise PreconditionError("tau and slack must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "slack", float(self.slack))

    @classmethod
    def sample(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray], tau: float, slack: float = 0.0) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.points()), dtype=float), tau, slack)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def spread(self) -> float:
        return float(self.values.max() - self.values.min())

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, values, self.tau, self.slack)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at arbitrary points (clipped into the grid box)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pts = np.clip(pts, self.grid.lower, self.grid.upper)
        interp = RegularGridInterpolator(self.grid.axes(), self.as_array(), method="linear")
        return interp(pts)


def _require_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid != g.grid:
        raise GridMismatchError("mismatched grids")


# ---------- Lipschitz estimation ----------
def lip_const_estimate(f: GridFunction, seed: int = 0, random_pairs: int = RANDOM_PAIRS) -> float:
    """
    Largest |v(s)-v(t)| / ||s-t||_2 over examined pairs of grid points.

    Up to ALL_PAIRS_LIMIT points every pair is examined. Larger grids use
    all axis-aligned neighbour pairs plus `random_pairs` pairs drawn from
    a generator seeded with `seed`, so the estimate is a lower bound that
    is still deterministic.
    """
    n = f.grid.count
    if n < 2:
        raise PreconditionError("degenerate grid")
    v = f.values
    if n <= ALL_PAIRS_LIMIT:
        pts = f.grid.points()
        best = 0.0
        for start in range(0, n, _BLOCK):
            stop = min(start + _BLOCK, n)
            d = cdist(pts[start:stop], pts[start:])
            dv = np.abs(v[start:stop, None] - v[None, start:])
            upper = np.arange(start, n)[None, :] > np.arange(start, stop)[:, None]
            if upper.any():
                best = max(best, float(np.max(dv[upper] / d[upper])))
        return best

    arr = f.as_array()
    h = f.grid.spacing
    best = 0.0
    for axis in range(f.grid.k):
        best = max(best, float(np.max(np.abs(np.diff(arr, axis=axis))) / h[axis]))
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, n, size=(int(random_pairs), 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if len(pairs):
        pts = f.grid.points()
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        dv = np.abs(v[pairs[:, 0]] - v[pairs[:, 1]])
        best = max(best, float(np.max(dv / d)))
    return best


def lip1_metric(f1: GridFunction, f2: GridFunction, m_max: int = DEFAULT_M_MAX) -> float:
    """
    Truncated metric on Lip_1(R^k): sum over M=1..m_max of
    2^-M * max_{[-M,M]^k} |f1 - f2|. Truncation error is at most 2^-m_max.
    """
    _require_same_grid(f1, f2)
    grid = f1.grid
    if m_max < 1:
        raise PreconditionError("m_max must be at least 1")
    if not grid.covers([-m_max] * grid.k, [m_max] * grid.k):
        raise PreconditionError(f"grid does not cover [-{m_max},{m_max}]^{grid.k}")
    sup = np.max(np.abs(grid.points()), axis=1)
    diff = np.abs(f1.values - f2.values)
    total = 0.0
    for m in range(1, m_max + 1):
        inside = sup <= m + _COVER_TOL
        if inside.any():
            total += 2.0 ** (-m) * float(diff[inside].max())
    return total


# ---------- Closure operations ----------
def lip_max(f: GridFunction, g: GridFunction) -> GridFunction:
    _require_same_grid(f, g)
    return GridFunction(f.grid, np.maximum(f.values, g.values), max(f.tau, g.tau), max(f.slack, g.slack))


def lip_min(f: GridFunction, g: GridFunction) -> GridFunction:
    _require_same_grid(f, g)
    return GridFunction(f.grid, np.minimum(f.values, g.values), max(f.tau, g.tau), max(f.slack, g.slack))


def clamp01(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, np.clip(f.values, 0.0, 1.0), f.tau, f.slack)


def composite_lip_bound(tau_prime: float, delta: float, epsilon: float) -> float:
    """
    Budget for pairs routed through a nearby anchor: a point within
    delta*d(A, E) of the anchored set whose value is within epsilon*d(A, E)
    of its anchor sees slopes of at most (tau' + epsilon) / (1 - delta).
    """
    if delta >= 1.0:
        raise PreconditionError("composite bound needs delta < 1")
    if tau_prime < 0 or delta < 0 or epsilon < 0:
        raise PreconditionError("composite bound inputs must be nonnegative")
    return (tau_prime + epsilon) / (1.0 - delta)


# ---------- Gradient check ----------
@dataclass(frozen=True)
class GradientReport:
    max_norm: float
    tau: float
    tol: float
    interior_points: int
    passed: bool


def gradient_bound_check(f: GridFunction, tau: float, tol: float = 1e-9) -> GradientReport:
    """Central-difference gradient norm at interior grid points against tau + tol."""
    arr = f.as_array()
    k = f.grid.k
    if any(n < 3 for n in f.grid.shape):
        return GradientReport(0.0, tau, tol, 0, True)
    h = f.grid.spacing
    inner = [slice(1, -1)] * k
    sq = None
    for axis in range(k):
        fwd = list(inner)
        bwd = list(inner)
        fwd[axis] = slice(2, None)
        bwd[axis] = slice(None, -2)
        comp = (arr[tuple(fwd)] - arr[tuple(bwd)]) / (2.0 * h[axis])
        sq = comp ** 2 if sq is None else sq + comp ** 2
    norms = np.sqrt(sq)
    max_norm = float(norms.max())
    return GradientReport(max_norm, float(tau), float(tol), int(norms.size), max_norm <= tau + tol)
