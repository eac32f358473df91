# services/mollify.py
"""
Variable-radius mollification on the cube [0,a]^k.

Phi(b) = sum_j w_j * phi(b - rho(b) * t_j) where (t_j, w_j) is a
tensor quadrature of the standard bump over the unit ball and rho(b)
shrinks linearly to zero at the cube boundary and at an excluded set of
points and segments. Where rho vanishes Phi equals phi, so boundary and
anchor values survive smoothing unchanged.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from services.errors import PreconditionError
from services.extension import as_points
from services.lipfun import GridFunction

# Distances this small are treated as lying on the excluded set.
ON_SET_TOL = 1e-13
_QUERY_BUDGET = 200_000


@dataclass(frozen=True)
class MollifyParams:
    delta: float
    epsilon: float
    tau: float
    quad_points_per_axis: int = 21

    def __post_init__(self):
        if not self.delta > 0:
            raise PreconditionError("mollify delta must be positive")
        if not self.epsilon > 0:
            raise PreconditionError("mollify epsilon must be positive")
        if not (0.0 < self.tau < 1.0):
            raise PreconditionError("mollify tau must lie in (0,1)")
        if self.quad_points_per_axis < 5:
            raise PreconditionError("quad_points_per_axis must be at least 5")


@dataclass(frozen=True, eq=False)
class DomainDescriptor:
    a: float
    k: int
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    segments: Tuple[Tuple[np.ndarray, np.ndarray], ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts = pts.reshape(-1, self.k) if pts.size else np.empty((0, self.k))
        segs = tuple((np.asarray(p, dtype=float).reshape(self.k), np.asarray(q, dtype=float).reshape(self.k)) for p, q in self.segments)
        for arr in [pts] + [s for pair in segs for s in pair]:
            if arr.size and (np.any(arr < -ON_SET_TOL) or np.any(arr > self.a + ON_SET_TOL)):
                raise PreconditionError("excluded set must lie inside [0,a]^k")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "segments", segs)


def _segment_distance(b: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    v = q - p
    vv = float(v @ v)
    if vv == 0.0:
        return np.linalg.norm(b - p, axis=1)
    t = np.clip(((b - p) @ v) / vv, 0.0, 1.0)
    return np.linalg.norm(b - (p[None, :] + t[:, None] * v[None, :]), axis=1)


def distance_to_boundary(b, dom: DomainDescriptor):
    """
    h(b): distance from b to the cube boundary, the excluded points and the
    excluded segments, whichever is nearest. Accepts one point or an
    (n,k) array; returns a float or an array accordingly.
    """
    single = np.ndim(b) == 0 or (np.ndim(b) == 1 and np.size(b) == dom.k)
    B = as_points(b, dom.k)
    h = np.min(np.minimum(B, dom.a - B), axis=1)
    h = np.maximum(h, 0.0)
    if dom.points.shape[0]:
        h = np.minimum(h, cdist(B, dom.points).min(axis=1))
    for p, q in dom.segments:
        h = np.minimum(h, _segment_distance(B, p, q))
    h[h <= ON_SET_TOL] = 0.0
    return float(h[0]) if single else h


def radius_field(b, params: MollifyParams, dom: DomainDescriptor):
    """rho(b) = min(delta/(2 tau), (epsilon/(2 tau)) * h(b))."""
    if params.epsilon > params.tau:
        raise PreconditionError("epsilon must not exceed tau")
    h = distance_to_boundary(b, dom)
    cap = params.delta / (2.0 * params.tau)
    rho = np.minimum(cap, params.epsilon / (2.0 * params.tau) * np.asarray(h, dtype=float))
    return float(rho) if np.ndim(rho) == 0 else rho


# ---------- Mollifier ----------
def _bump(t: np.ndarray) -> np.ndarray:
    r2 = np.sum(np.atleast_2d(t) ** 2, axis=1)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=16)
def quadrature_rule(k: int, quad_points_per_axis: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Nodes inside the unit ball, their weights (summing to one) and the
    normalising constant c of the bump. Nodes are exactly symmetric under
    t -> -t.
    """
    q = int(quad_points_per_axis)
    line = (2.0 * np.arange(q) - (q - 1)) / (q - 1)
    mesh = np.meshgrid(*([line] * k), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    raw = _bump(nodes)
    keep = raw > 0.0
    nodes, raw = nodes[keep], raw[keep]
    cell = (2.0 / (q - 1)) ** k
    c = 1.0 / float(np.sum(raw) * cell)
    weights = c * raw * cell
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights, c


def mollifier_weight(t, quad_points_per_axis: int = 21) -> float:
    """theta(t) = c * exp(-1 / (1 - ||t||^2)) inside the unit ball, 0 outside."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _, _, c = quadrature_rule(t.size, quad_points_per_axis)
    return float(c * _bump(t.reshape(1, -1))[0])


def mollify_callable(
    evaluate: Callable[[np.ndarray], np.ndarray],
    points,
    dom: DomainDescriptor,
    params: MollifyParams,
    base_values: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Mollify an arbitrary pointwise evaluator at `points`. Points with
    rho = 0 take evaluate(b) (or base_values when given) unchanged.
    """
    B = as_points(points, dom.k)
    rho = np.atleast_1d(radius_field(B, params, dom))
    nodes, weights, _ = quadrature_rule(dom.k, params.quad_points_per_axis)
    out = np.empty(B.shape[0])
    flat = rho <= 0.0
    if flat.any():
        out[flat] = base_values[flat] if base_values is not None else evaluate(B[flat])
    idx = np.nonzero(~flat)[0]
    step = max(1, _QUERY_BUDGET // len(nodes))
    for start in range(0, idx.size, step):
        chunk = idx[start:start + step]
        shifted = B[chunk, None, :] - rho[chunk, None, None] * nodes[None, :, :]
        vals = np.asarray(evaluate(shifted.reshape(-1, dom.k))).reshape(chunk.size, len(nodes))
        out[chunk] = vals @ weights
    return out


def mollify_fn(phi: GridFunction, dom: DomainDescriptor, params: MollifyParams) -> GridFunction:
    """Mollify grid samples, reading phi off-grid by multilinear interpolation."""
    if not phi.grid.covers([0.0] * dom.k, [dom.a] * dom.k):
        raise PreconditionError("phi must cover [0,a]^k")
    vals = mollify_callable(phi.interpolate, phi.grid.points(), dom, params, base_values=phi.values)
    slack = phi.slack + 2.0 * params.tau * float(phi.grid.spacing.max())
    return GridFunction(phi.grid, vals, params.tau + params.epsilon, slack)


# ---------- Diagnostics ----------
@dataclass(frozen=True)
class SmoothnessReport:
    max_second_difference: float
    bound: float
    points_checked: int
    passed: bool


def second_difference_report(Phi: GridFunction, dom: DomainDescriptor, params: MollifyParams, factor: float = 10.0) -> SmoothnessReport:
    """
    Axis second differences of Phi at interior points far from the excluded
    set (h > 2 * max rho), against factor * (tau + epsilon) / min rho.
    """
    grid = Phi.grid
    arr = Phi.as_array()
    h = grid.spacing
    pts = grid.points()
    rho_cap = params.delta / (2.0 * params.tau)
    dist = distance_to_boundary(pts, dom).reshape(grid.shape)
    rho = np.asarray(radius_field(pts, params, dom)).reshape(grid.shape)
    inner = [slice(1, -1)] * grid.k
    far = dist[tuple(inner)] > 2.0 * rho_cap
    if not far.any():
        return SmoothnessReport(0.0, float("inf"), 0, True)
    worst = np.zeros(far.shape)
    for axis in range(grid.k):
        fwd = list(inner)
        bwd = list(inner)
        fwd[axis] = slice(2, None)
        bwd[axis] = slice(None, -2)
        second = np.abs(arr[tuple(fwd)] - 2.0 * arr[tuple(inner)] + arr[tuple(bwd)]) / h[axis] ** 2
        worst = np.maximum(worst, second)
    bound = factor * (params.tau + params.epsilon) / float(rho[tuple(inner)][far].min())
    top = float(worst[far].max())
    return SmoothnessReport(top, bound, int(far.sum()), top <= bound)
