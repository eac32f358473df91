# services/genvec.py
"""
Generic vector sampling with numerical rank certificates.

Vectors u_1..u_M over the N points of A are drawn uniformly from small
boxes around target values and kept only if the stacked matrices behind
each independence condition have smallest singular value above a
tolerance:

  cond2  {e, u_1..u_M}                              in R^N
  cond3  {e~, D u_1..D u_M} on indices L+1..Q+1      in R^(Q-L)
  cond4  {u_m|Lambda, u_m|(j+Lambda)} per shift j    in R^(Q-L)

e and e~ are all-ones vectors; Lambda is indices L+1..Q (1-indexed).
"""
from dataclasses import dataclass, replace
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from services.errors import GenericityError, PreconditionError
from services.runlog import debug

RANK_TOL = 1e-9
_BOX_EDGE = 1e-12


# ---------- Vector helpers ----------
def diff_vector(u) -> np.ndarray:
    """Forward differences (u2-u1, ..., u_{n+1}-u_n)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size < 2:
        raise PreconditionError("diff_vector needs at least 2 entries")
    return np.diff(u)


def window_restrict(u, alpha: int, l: int) -> np.ndarray:
    """Entries alpha..alpha+l-1 of u, counting from 1."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if alpha < 1 or l < 1 or alpha + l - 1 > u.size:
        raise PreconditionError(f"window [{alpha}, {alpha + l - 1}] out of range for length {u.size}")
    return u[alpha - 1:alpha - 1 + l].copy()


class RankCheck(NamedTuple):
    ok: bool
    certificate: float
    reason: str = ""


def rank_full_check(vectors: Sequence, tol: float = RANK_TOL) -> RankCheck:
    """Smallest singular value of the stacked vectors, compared with tol."""
    rows = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
    if not rows:
        raise PreconditionError("rank_full_check needs at least one vector")
    if len({r.size for r in rows}) != 1:
        raise PreconditionError("vectors must share one length")
    mat = np.vstack(rows)
    if mat.shape[0] > mat.shape[1]:
        return RankCheck(False, 0.0, "dimension deficit")
    cert = float(np.linalg.svd(mat, compute_uv=False)[-1])
    if cert > tol:
        return RankCheck(True, cert)
    return RankCheck(False, cert, "rank deficient")


# ---------- Geometry ----------
@dataclass(frozen=True)
class VectorGeometry:
    n: int
    lam_start: int  # L+1
    lam_stop: int   # Q
    shifts: Tuple[int, ...] = ()

    @classmethod
    def from_indices(cls, n: int, L: int, Q: int) -> "VectorGeometry":
        """Shifts j != 0 that keep j + Lambda inside 1..n."""
        shifts = tuple(j for j in range(-L, n - Q + 1) if j != 0)
        return cls(n, L + 1, Q, shifts)

    @property
    def lam_size(self) -> int:
        return self.lam_stop - self.lam_start + 1


@dataclass(frozen=True, eq=False)
class GenericVectorSet:
    vectors: np.ndarray
    targets: np.ndarray
    eta: float
    certificates: Dict[str, float]
    seed: int
    attempts: int = 1

    @property
    def M(self) -> int:
        return self.vectors.shape[0]

    @property
    def N(self) -> int:
        return self.vectors.shape[1]


def _certify(vectors: np.ndarray, geometry: VectorGeometry, tol: float) -> Tuple[Dict[str, float], Optional[str]]:
    M, N = vectors.shape
    lam = geometry.lam_size
    certs: Dict[str, float] = {}
    failed: Optional[str] = None

    check = rank_full_check([np.ones(N)] + list(vectors), tol)
    certs["cond2"] = check.certificate
    if not check.ok:
        failed = failed or "cond2"

    diffs = [diff_vector(window_restrict(u, geometry.lam_start, lam + 1)) for u in vectors]
    check = rank_full_check([np.ones(lam)] + diffs, tol)
    certs["cond3"] = check.certificate
    if not check.ok:
        failed = failed or "cond3"

    worst = float("inf")
    base = [window_restrict(u, geometry.lam_start, lam) for u in vectors]
    for j in geometry.shifts:
        moved = [window_restrict(u, geometry.lam_start + j, lam) for u in vectors]
        check = rank_full_check(base + moved, tol)
        worst = min(worst, check.certificate)
        if not check.ok:
            failed = failed or "cond4"
    certs["cond4"] = worst
    return certs, failed


def sample_generic_vectors(
    targets,
    geometry: VectorGeometry,
    eta: float,
    seed: int,
    max_retries: int = 10,
    tol: float = RANK_TOL,
) -> GenericVectorSet:
    """
    Rejection-sample u_m uniformly in (target_m - eta, target_m + eta) cut
    to (0,1), retrying with the same generator until every condition
    certifies. Raises GenericityError naming the last failing condition.
    """
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    M, N = T.shape
    if N != geometry.n:
        raise PreconditionError(f"targets have length {N}, geometry expects {geometry.n}")
    if geometry.lam_stop + 1 > N or geometry.lam_start < 1:
        raise PreconditionError("Lambda and its successor index must lie inside A")
    if not (N > geometry.lam_size >= 2 * M):
        raise PreconditionError(f"need N > Q-L >= 2M, got N={N}, Q-L={geometry.lam_size}, M={M}")
    if not eta > 0:
        raise PreconditionError("eta must be positive")
    lo = np.maximum(T - eta, _BOX_EDGE)
    hi = np.minimum(T + eta, 1.0 - _BOX_EDGE)
    if np.any(lo >= hi):
        raise PreconditionError("sampling box is empty for some target")

    rng = np.random.default_rng(seed)
    failed: Optional[str] = None
    for attempt in range(1, max_retries + 2):
        vectors = rng.uniform(lo, hi)
        certs, failed = _certify(vectors, geometry, tol)
        if failed is None:
            debug("genvec", f"seed={seed} certified on draw {attempt}", certs)
            return GenericVectorSet(vectors, T.copy(), float(eta), certs, int(seed), attempt)
        debug("genvec", f"seed={seed} draw {attempt} failed {failed}")
    raise GenericityError(f"no generic vectors after {max_retries + 1} draws; {failed} failed", condition=failed)


def recertify(uset: GenericVectorSet, geometry: VectorGeometry, tol: float = RANK_TOL) -> Tuple[bool, Dict[str, float]]:
    certs, failed = _certify(uset.vectors, geometry, tol)
    inside = bool(np.all((uset.vectors > 0.0) & (uset.vectors < 1.0)))
    close = bool(np.all(np.abs(uset.vectors - uset.targets) < uset.eta))
    return failed is None and inside and close, certs


def corrupt_periodic(uset: GenericVectorSet, period: int, geometry: Optional[VectorGeometry] = None) -> GenericVectorSet:
    """
    Copy of uset whose entries repeat with the given index period, so
    u|(period + Lambda) == u|Lambda and the shift condition breaks.
    """
    if period < 1:
        raise PreconditionError("period must be positive")
    idx = np.arange(uset.N) % period
    vectors = uset.vectors[:, idx]
    certs = _certify(vectors, geometry, RANK_TOL)[0] if geometry is not None else {}
    return replace(uset, vectors=vectors, certificates=certs, attempts=0)
