# services/extension.py
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from services.errors import ExtensionError, PreconditionError

DUPLICATE_TOL = 1e-12
CONSISTENCY_TOL = 1e-12
_CHUNK = 2048


def as_points(points, k: int) -> np.ndarray:
    """Coerce a single point, a flat k=1 list or an (n,k) array to shape (n,k)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if k == 1 else arr.reshape(1, -1)
    if arr.shape[1] != k:
        raise PreconditionError(f"expected points in R^{k}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class AnchorSet:
    points: np.ndarray
    values: np.ndarray
    tau: float

    def __post_init__(self):
        pts = np.atleast_2d(np.array(self.points, dtype=float))
        vals = np.array(self.values, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise ExtensionError("anchor set is empty")
        if pts.shape[0] != vals.size:
            raise ExtensionError("anchor points and values differ in length")
        if self.tau < 0:
            raise ExtensionError("anchor budget must be nonnegative")
        pts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.values.size

    def validate(self) -> None:
        """Raise unless the anchors admit a tau-Lipschitz extension."""
        n = len(self)
        if n == 1:
            return
        d = cdist(self.points, self.points)
        dv = np.abs(self.values[:, None] - self.values[None, :])
        iu = np.triu_indices(n, 1)
        if np.any(d[iu] <= DUPLICATE_TOL):
            raise ExtensionError("duplicate anchor points")
        excess = dv[iu] - self.tau * d[iu]
        if np.any(excess > CONSISTENCY_TOL):
            raise ExtensionError(f"not τ-extendable (worst excess {float(excess.max()):.3e} at tau={self.tau})")


def pairwise_lipschitz(points: np.ndarray, values: np.ndarray) -> float:
    """Largest |v_i - v_j| / ||p_i - p_j||_2 over distinct anchor pairs."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(values, dtype=float).reshape(-1)
    n = vals.size
    best = 0.0
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        d = cdist(pts[start:stop], pts[start:])
        dv = np.abs(vals[start:stop, None] - vals[None, start:])
        upper = np.arange(start, n)[None, :] > np.arange(start, stop)[:, None]
        upper &= d > DUPLICATE_TOL
        if upper.any():
            best = max(best, float(np.max(dv[upper] / d[upper])))
    return best


def mcshane_extend(anchors: AnchorSet, queries, check: bool = True) -> np.ndarray:
    """
    Upper McShane extension Phi(q) = max_i (v_i - tau * ||q - p_i||_2).

    Queries that coincide with an anchor (within DUPLICATE_TOL) return the
    anchor value itself.
    """
    if check:
        anchors.validate()
    q = as_points(queries, anchors.k)
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], _CHUNK):
        stop = min(start + _CHUNK, q.shape[0])
        d = cdist(q[start:stop], anchors.points)
        block = np.max(anchors.values[None, :] - anchors.tau * d, axis=1)
        nearest = np.argmin(d, axis=1)
        hit = d[np.arange(stop - start), nearest] <= DUPLICATE_TOL
        block[hit] = anchors.values[nearest[hit]]
        out[start:stop] = block
    return out


def random_lipschitz_anchors(k: int, n: int, tau: float, seed: int, box: float = 1.0, cones: int = 3) -> AnchorSet:
    """Anchors sampled from tau * min_j(||p - c_j|| + o_j), which is tau-Lipschitz."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, box, size=(n, k))
    centers = rng.uniform(0.0, box, size=(cones, k))
    offsets = rng.uniform(0.0, 0.5 * box, size=cones)
    vals = tau * np.min(cdist(pts, centers) + offsets[None, :], axis=1)
    return AnchorSet(pts, vals, tau)


def mcshane_lower(anchors: AnchorSet, queries, check: bool = True) -> np.ndarray:
    """Lower (Whitney) envelope min_i (v_i + tau * ||q - p_i||_2)."""
    if check:
        anchors.validate()
    q = as_points(queries, anchors.k)
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], _CHUNK):
        stop = min(start + _CHUNK, q.shape[0])
        d = cdist(q[start:stop], anchors.points)
        out[start:stop] = np.min(anchors.values[None, :] + anchors.tau * d, axis=1)
    return out
