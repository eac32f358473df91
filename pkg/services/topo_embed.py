# services/topo_embed.py
"""
Perturbation pipeline behind the topological embedding.

  f    target read off the second observable h2 along orbits
  f0   Gaussian smoothing of h1 along orbits (1/2-Lipschitz, equivariant)
  f1   blend (1 - delta) f + delta f0
  U_m  balls of diameter < delta covering the states, f1 varying < delta/8 on each
  g    anchored on Edge, A and conv(Lambda); extended, clamped to f +- delta/2,
       mollified and clamped to [0,1]
  g1   g spliced into f1 on the marker cubes s + [0,a]^k of local sections

Ensembles are evaluated lazily: a state plus query points in R^k gives
values; nothing is tabulated over the state space.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss

from services.errors import BudgetError, PreconditionError, SectionError
from services.extension import AnchorSet, as_points, mcshane_extend, pairwise_lipschitz
from services.flows import Flow, LocalSection, marker_set
from services.genvec import GenericVectorSet, VectorGeometry, sample_generic_vectors
from services.lipfun import GridFunction, GridSpec, composite_lip_bound, lip1_metric
from services.mollify import DomainDescriptor, MollifyParams, mollify_callable
from services.runlog import debug

GAUSS_NODES_1D = 64
GAUSS_NODES_ND = 32
# Largest Hermite node must reach this many bandwidths (tail below 1e-15).
TAIL_NODES = 6.0
EVAL_POINTS = 33
PIPELINE_QUAD_POINTS = 9
SPREAD_TOL = 1e-9
MARKER_TOL = 1e-9
_QUERY_BUDGET = 400_000
TARGET_AMPLITUDE = 0.03
# Cover radius starts at COVER_RATIO * delta / 2 and shrinks by COVER_SHRINK.
COVER_RATIO = 0.9
COVER_SHRINK = 0.75
COVER_TRIES = 10
# Every state lies within radius / COVER_OVERLAP of an anchor, so some psi_m >= 1/5.
COVER_OVERLAP = 1.25
MAX_COVER = 32
COVER_GRID_POINTS = 9


# ---------- Ensembles ----------
@dataclass(frozen=True, eq=False)
class EnsembleFunction:
    k: int
    tau: float
    slack: float = 0.0
    name: str = ""
    evaluate: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def values(self, x, points) -> np.ndarray:
        if self.evaluate is None:
            raise NotImplementedError(f"{self.name or 'ensemble'} has no evaluator")
        return np.asarray(self.evaluate(np.asarray(x, dtype=float), as_points(points, self.k)), dtype=float)

    def state_tau(self, x) -> float:
        return self.tau

    def on_grid(self, x, grid: GridSpec) -> GridFunction:
        return GridFunction(grid, self.values(x, grid.points()), self.state_tau(x), self.slack)


def observable_ensemble(flow: Flow, observable: Callable[[np.ndarray], np.ndarray], tau: float = 1.0, name: str = "observable") -> EnsembleFunction:
    """f(x)(t) = observable(act(t, x)); equivariant by construction."""
    def evaluate(x, pts):
        return observable(flow.act(pts, x))
    return EnsembleFunction(k=flow.k, tau=float(tau), name=name, evaluate=evaluate)


def target_ensemble(flow: Flow, amplitude: float = TARGET_AMPLITUDE) -> EnsembleFunction:
    """
    f(x)(t) = 1/2 + amplitude * (2 h2(act(t, x)) - 1). The amplitude bounds
    how fast f moves with the state, and with it the size of the cover.
    """
    if not (0.0 < amplitude <= 0.5):
        raise PreconditionError("target amplitude must lie in (0, 1/2]")

    def observable(states):
        return 0.5 + amplitude * (2.0 * np.asarray(flow.h2(states)) - 1.0)
    return observable_ensemble(flow, observable, tau=2.0 * amplitude * flow.h2_rate, name="f")


@lru_cache(maxsize=8)
def _hermite_rule(k: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    y, w = hermgauss(int(nodes))
    if float(y.max()) < TAIL_NODES:
        raise PreconditionError(f"{nodes} Hermite nodes reach only {float(y.max()):.2f} bandwidths; need {TAIL_NODES}")
    mesh = np.meshgrid(*([y] * k), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w] * k), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    weights = weights / weights.sum()
    pts.setflags(write=False)
    weights.setflags(write=False)
    return pts, weights


def min_bandwidth(k: int) -> float:
    return 4.0 * k / np.sqrt(np.pi)


def _check_bandwidth(k: int, bwidth: float) -> None:
    if bwidth < min_bandwidth(k) * (1.0 - 1e-12):
        raise PreconditionError(f"bwidth {bwidth!r} below 4k/sqrt(pi) = {min_bandwidth(k)!r}")


def _gaussian_values(flow: Flow, bwidth: float, nodes: int, x, pts: np.ndarray) -> np.ndarray:
    rule, weights = _hermite_rule(flow.k, nodes)
    out = np.empty(pts.shape[0])
    step = max(1, _QUERY_BUDGET // len(weights))
    for start in range(0, pts.shape[0], step):
        chunk = pts[start:start + step]
        times = (chunk[:, None, :] - bwidth * rule[None, :, :]).reshape(-1, flow.k)
        h = np.asarray(flow.h1(flow.act(times, x))).reshape(chunk.shape[0], len(weights))
        out[start:start + step] = h @ weights
    return out


def _default_nodes(k: int) -> int:
    return GAUSS_NODES_1D if k == 1 else GAUSS_NODES_ND


def gaussian_base(flow: Flow, bwidth: float, x, window: GridSpec, nodes: Optional[int] = None) -> GridFunction:
    """
    f0(x)(t) = int K(u) h1(act(t - u, x)) du with K the Gaussian of width
    bwidth, by tensor Gauss-Hermite quadrature in u. Declared tau = 1/2.
    """
    _check_bandwidth(flow.k, bwidth)
    vals = _gaussian_values(flow, bwidth, nodes or _default_nodes(flow.k), x, window.points())
    return GridFunction(window, vals, tau=0.5)


def gaussian_ensemble(flow: Flow, bwidth: Optional[float] = None, nodes: Optional[int] = None) -> EnsembleFunction:
    b = min_bandwidth(flow.k) if bwidth is None else float(bwidth)
    _check_bandwidth(flow.k, b)
    n = nodes or _default_nodes(flow.k)
    _hermite_rule(flow.k, n)

    def evaluate(x, pts):
        return _gaussian_values(flow, b, n, x, pts)
    return EnsembleFunction(k=flow.k, tau=0.5, name="f0", evaluate=evaluate)


def blend(f: EnsembleFunction, f0: EnsembleFunction, delta: float) -> EnsembleFunction:
    """(1 - delta) f + delta f0, declaring the matching convex combination of budgets."""
    if not (0.0 <= delta <= 1.0):
        raise PreconditionError("blend delta must lie in [0,1]")
    if f.k != f0.k:
        raise PreconditionError("blend needs ensembles over the same R^k")

    def evaluate(x, pts):
        return (1.0 - delta) * f.values(x, pts) + delta * f0.values(x, pts)
    tau = (1.0 - delta) * f.tau + delta * f0.tau
    slack = (1.0 - delta) * f.slack + delta * f0.slack
    return EnsembleFunction(k=f.k, tau=tau, slack=slack, name="f1", evaluate=evaluate)


# ---------- Main lemma parameters ----------
@dataclass(frozen=True)
class MainLemmaParams:
    a: float
    delta: float
    tau: float
    M: int
    k: int
    b: float
    c: float
    N: int
    Delta: float
    L: int
    Q: int
    eta: float
    edge_gap: float
    eval_points: int = EVAL_POINTS

    @property
    def grid_values(self) -> np.ndarray:
        return np.linspace(self.b, self.c, self.N)

    @property
    def A_points(self) -> np.ndarray:
        """(a/2, ..., a/2, a_r) for r = 1..N."""
        col = np.full((self.N, self.k - 1), self.a / 2.0)
        return np.column_stack([col, self.grid_values])

    @property
    def lambda_points(self) -> np.ndarray:
        return self.A_points[self.L:self.Q]

    @property
    def lambda_segment(self) -> Tuple[np.ndarray, np.ndarray]:
        lam = self.lambda_points
        return lam[0], lam[-1]

    @property
    def geometry(self) -> VectorGeometry:
        return VectorGeometry.from_indices(self.N, self.L, self.Q)

    @property
    def eval_grid(self) -> GridSpec:
        return GridSpec.cube(self.k, self.a, self.eval_points)

    @property
    def domain(self) -> DomainDescriptor:
        return DomainDescriptor(self.a, self.k, self.A_points, (self.lambda_segment,))

    @property
    def edge_ratio(self) -> float:
        return self.Delta / self.edge_gap


def choose_main_lemma_params(
    a: float,
    delta: float,
    tau: float,
    M: int,
    k: int = 2,
    edge_gap_ratio: Optional[float] = None,
    eval_points: int = EVAL_POINTS,
    max_points: int = 100_000,
) -> MainLemmaParams:
    """
    b = a/16, c = 15a/16 and the smallest N >= 3 with
    Delta < delta/8, Q - L >= 2M and Delta / d(A, Edge) <= edge_gap_ratio
    (default (1 - tau)/8).
    """
    if not (0.0 < tau < 1.0):
        raise PreconditionError("tau must lie in (0,1)")
    if not delta > 0 or not a > 0:
        raise PreconditionError("a and delta must be positive")
    if M < 1 or k < 1:
        raise PreconditionError("M and k must be at least 1")
    b, c = a / 16.0, 15.0 * a / 16.0
    gap = min(b, a / 2.0)
    kappa = (1.0 - tau) / 8.0 if edge_gap_ratio is None else float(edge_gap_ratio)
    tol = 1e-12 * a
    for N in range(3, max_points + 1):
        vals = np.linspace(b, c, N)
        Delta = (c - b) / (N - 1)
        L = int(np.sum(vals <= a / 4.0 + tol))
        Q = int(np.sum(vals <= a / 2.0 + tol))
        if Delta < delta / 8.0 and Q - L >= 2 * M and Delta / gap <= kappa:
            eta = min(delta / 8.0, (1.0 - tau) * gap / 8.0, (1.0 - tau) * Delta / 4.0)
            debug("main-lemma", f"N={N} Delta={Delta:.3e} L={L} Q={Q} eta={eta:.3e}")
            return MainLemmaParams(float(a), float(delta), float(tau), int(M), int(k), b, c, N, Delta, L, Q, eta, gap, int(eval_points))
    raise PreconditionError(f"no N up to {max_points} meets the grid constraints")


# ---------- Cover ----------
@dataclass(frozen=True, eq=False)
class CoverData:
    flow: Flow
    anchors: np.ndarray
    radii: np.ndarray

    @property
    def M(self) -> int:
        return self.anchors.shape[0]

    def weights(self, x) -> np.ndarray:
        """Partition of unity h_m(x) = psi_m / sum psi with psi_m = max(0, 1 - dist/r_m)."""
        X = np.asarray(x, dtype=float)
        single = X.ndim <= 1
        X = X.reshape(-1, self.flow.state_dim)
        psi = np.column_stack([
            np.maximum(0.0, 1.0 - np.atleast_1d(self.flow.dist(X, p)) / r) for p, r in zip(self.anchors, self.radii)
        ])
        total = psi.sum(axis=1)
        if np.any(total <= 0.0):
            raise PreconditionError("state outside the cover")
        h = psi / total[:, None]
        return h[0] if single else h


def build_cover(flow: Flow, radius: float, overlap: float = COVER_OVERLAP) -> CoverData:
    """
    Balls U_m of the given radius around flow.cover_anchors(radius / overlap).
    Every state sits inside some U_m and diam U_m <= 2 * radius.
    """
    if not radius > 0 or not overlap > 1.0:
        raise PreconditionError("cover needs radius > 0 and overlap > 1")
    anchors = flow.cover_anchors(radius / overlap)
    return CoverData(flow, anchors, np.full(anchors.shape[0], float(radius)))


@dataclass(frozen=True)
class CoverDiameterReport:
    per_element: Tuple[float, ...]
    bound: float
    radius: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.per_element) if self.per_element else 0.0

    @property
    def passed(self) -> bool:
        return self.worst < self.bound


def cover_diameter_check(
    cover: CoverData,
    f1: EnsembleFunction,
    grid: GridSpec,
    delta: float,
    seed: int = 0,
    pool: int = 8,
    candidates: int = 4000,
) -> CoverDiameterReport:
    """
    Largest sup-distance on the grid between f1 at the anchor and at up to
    pool sampled members of each U_m, over all member pairs, against delta/8.
    """
    flow = cover.flow
    states = flow.sample_states(candidates, seed)
    pts = grid.points()
    diams = []
    for p, r in zip(cover.anchors, cover.radii):
        near = np.atleast_1d(flow.dist(states, p)) < r
        members = np.vstack([p.reshape(1, -1), states[near][:pool]])
        vals = np.vstack([f1.values(s, pts) for s in members])
        diams.append(float(np.max(np.abs(vals[:, None, :] - vals[None, :, :]))))
    return CoverDiameterReport(tuple(diams), delta / 8.0, float(cover.radii.max()))


def fit_cover(
    flow: Flow,
    f1: EnsembleFunction,
    delta: float,
    grid: GridSpec,
    seed: int = 0,
    max_elements: int = MAX_COVER,
    ratio: float = COVER_RATIO,
    pool: int = 8,
) -> Tuple[CoverData, CoverDiameterReport]:
    """
    Shrink the radius from ratio * delta / 2 until f1 varies less than
    delta/8 on every element. The element count is the M of the
    construction; more than max_elements raises BudgetError.
    """
    if not (0.0 < ratio < 1.0):
        raise PreconditionError("cover ratio must lie in (0,1)")
    radius = ratio * delta / 2.0
    report = None
    for _ in range(COVER_TRIES):
        cover = build_cover(flow, radius)
        if cover.M > max_elements:
            raise BudgetError(f"cover needs {cover.M} elements at radius {radius:.4g}, limit {max_elements}")
        report = cover_diameter_check(cover, f1, grid, delta, seed, pool)
        debug("cover", f"radius={radius:.4g} M={cover.M} worst={report.worst:.4g} bound={report.bound:.4g}")
        if report.passed:
            return cover, report
        radius *= COVER_SHRINK
    raise BudgetError(f"f varies {report.worst:.4g} >= delta/8 on cover elements after {COVER_TRIES} radii")


# ---------- Anchors ----------
def edge_points(grid: GridSpec, a: float) -> np.ndarray:
    """Grid points on the boundary of [0,a]^k."""
    pts = grid.points()
    on_edge = np.any((pts <= 1e-12 * a) | (pts >= a - 1e-12 * a), axis=1)
    return pts[on_edge]


def _lambda_midpoints(params: MainLemmaParams, a_values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lam = params.A_points[params.L:params.Q]
    vals = a_values[params.L:params.Q]
    return 0.5 * (lam[1:] + lam[:-1]), 0.5 * (vals[1:] + vals[:-1])


def anchor_budget(tau_in: float, pairwise: float, params: MainLemmaParams) -> float:
    """tau' for the full anchor set from the Edge and A constant."""
    tau0 = max(tau_in, pairwise)
    r = params.edge_ratio
    return composite_lip_bound(tau0, r, r * tau0)


def build_g0(x, f1: EnsembleFunction, uset: GenericVectorSet, cover: CoverData, params: MainLemmaParams) -> AnchorSet:
    """
    Anchors of g0(x): f1(x) on the Edge samples, sum_m h_m(x) u_m on A and
    the linear interpolation of A values at conv(Lambda) midpoints.
    """
    edge = edge_points(params.eval_grid, params.a)
    edge_vals = f1.values(x, edge)
    h = cover.weights(x)
    a_vals = h @ uset.vectors
    mid_pts, mid_vals = _lambda_midpoints(params, a_vals)

    core_pts = np.vstack([edge, params.A_points])
    core_vals = np.concatenate([edge_vals, a_vals])
    tau_prime = anchor_budget(f1.state_tau(x), pairwise_lipschitz(core_pts, core_vals), params)
    if tau_prime >= 1.0:
        raise BudgetError(f"anchor Lipschitz budget exceeded (tau'={tau_prime:.6f})")
    anchors = AnchorSet(np.vstack([core_pts, mid_pts]), np.concatenate([core_vals, mid_vals]), tau_prime)
    anchors.validate()
    return anchors


def g0_deviation(x, f1: EnsembleFunction, anchors: AnchorSet) -> float:
    """||g0(x) - f1(x)|| over the anchor points."""
    return float(np.max(np.abs(anchors.values - f1.values(x, anchors.points))))


# ---------- Main lemma map ----------
@dataclass(frozen=True, eq=False)
class _StateData:
    anchors: AnchorSet
    f_grid: GridFunction
    mollify: MollifyParams

    @property
    def tau_prime(self) -> float:
        return self.anchors.tau

    @property
    def tau_double_prime(self) -> float:
        return self.mollify.tau + self.mollify.epsilon


@dataclass(frozen=True, eq=False)
class MainLemmaMap(EnsembleFunction):
    f1: Optional[EnsembleFunction] = None
    cover: Optional[CoverData] = None
    params: Optional[MainLemmaParams] = None
    uset: Optional[GenericVectorSet] = None
    quad_points_per_axis: int = PIPELINE_QUAD_POINTS
    cache_size: int = 256
    _cache: Dict[bytes, _StateData] = field(default_factory=dict, init=False, repr=False)

    def state_data(self, x) -> _StateData:
        x = np.asarray(x, dtype=float).reshape(-1)
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.params
        anchors = build_g0(x, self.f1, self.uset, self.cover, p)
        tp = anchors.tau
        eps = min((1.0 - tp) / 4.0, tp)
        data = _StateData(
            anchors=anchors,
            f_grid=self.f1.on_grid(x, p.eval_grid),
            mollify=MollifyParams(delta=p.delta, epsilon=eps, tau=tp, quad_points_per_axis=self.quad_points_per_axis),
        )
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = data
        return data

    def state_tau(self, x) -> float:
        return self.state_data(x).tau_double_prime

    def clamped_extension(self, x, points) -> np.ndarray:
        """McShane extension of g0(x) squeezed into f1(x) +- delta/2."""
        st = self.state_data(x)
        q = as_points(points, self.k)
        ext = mcshane_extend(st.anchors, q, check=False)
        f = st.f_grid.interpolate(q)
        half = self.params.delta / 2.0
        return np.maximum(np.minimum(ext, f + half), f - half)

    def values(self, x, points) -> np.ndarray:
        q = as_points(points, self.k)
        a = self.params.a
        if np.any(q < -1e-12 * a) or np.any(q > a * (1.0 + 1e-12)):
            raise PreconditionError("g is defined on [0,a]^k only")
        q = np.clip(q, 0.0, a)
        st = self.state_data(x)
        out = mollify_callable(lambda pts: self.clamped_extension(x, pts), q, self.params.domain, st.mollify)
        return np.clip(out, 0.0, 1.0)

    def with_vectors(self, uset: GenericVectorSet) -> "MainLemmaMap":
        return replace(self, uset=uset, name=f"{self.name}*")


def main_lemma_g(
    f1: EnsembleFunction,
    cover: CoverData,
    params: MainLemmaParams,
    seed: int,
    quad_points_per_axis: int = PIPELINE_QUAD_POINTS,
    max_retries: int = 10,
) -> Tuple[MainLemmaMap, GenericVectorSet]:
    """Sample generic vectors around f1(p_m)|A and assemble the lazy map g."""
    if f1.k != params.k:
        raise PreconditionError("f1 and params disagree on k")
    if cover.M != params.M:
        raise PreconditionError(f"params were chosen for M={params.M}, cover has {cover.M} elements")
    targets = np.vstack([f1.values(p, params.A_points) for p in cover.anchors])
    uset = sample_generic_vectors(targets, params.geometry, params.eta, seed, max_retries=max_retries)
    r = params.edge_ratio
    tau_prime = composite_lip_bound(f1.tau, r, r * f1.tau)
    tau_nominal = tau_prime + (1.0 - tau_prime) / 4.0
    g = MainLemmaMap(
        k=params.k,
        tau=tau_nominal,
        name="g",
        f1=f1,
        cover=cover,
        params=params,
        uset=uset,
        quad_points_per_axis=quad_points_per_axis,
    )
    debug("main-lemma", f"seed={seed} uset attempts={uset.attempts}", uset.certificates)
    return g, uset


# ---------- Shift rigidity ----------
@dataclass(frozen=True)
class FuzzViolation:
    trial: int
    mode: str
    x_index: int
    y_index: int
    w: Tuple[float, ...]
    mismatch: float
    state_distance: float


@dataclass(frozen=True)
class FuzzReport:
    trials: int
    matches: int
    violations: int
    first_violations: Tuple[FuzzViolation, ...] = ()

    @property
    def passed(self) -> bool:
        return self.violations == 0


FUZZ_MODES = ("same-zero", "pair-zero", "same-grid", "pair-grid", "pair-random")


def shift_rigidity_fuzz(
    g: MainLemmaMap,
    states=None,
    trials: int = 1000,
    seed: int = 0,
    flow: Optional[Flow] = None,
    match_tol: float = 1e-6,
    w_tol: Optional[float] = None,
    pool: int = 64,
    keep: int = 10,
) -> FuzzReport:
    """
    Whenever g(x)(t + w) matches g(y)(t) on A inside [a/8, 7a/8]^k to
    match_tol, require |w| < w_tol and dist(x, y) < delta. Shifts w mix
    zero, multiples of Delta along the last axis (|w| <= a/16) and
    uniform draws from [-a/8, a/8]^k.
    """
    p = g.params
    flow = flow or g.cover.flow
    w_tol = p.Delta / 2.0 if w_tol is None else float(w_tol)
    rng = np.random.default_rng(seed)
    X = flow.sample_states(pool, seed) if states is None else np.asarray(states, dtype=float).reshape(-1, flow.state_dim)
    if X.shape[0] < 2:
        raise PreconditionError("shift_rigidity_fuzz needs at least 2 states")

    A = p.A_points
    inner = np.all((A >= p.a / 8.0 - 1e-12) & (A <= 7.0 * p.a / 8.0 + 1e-12), axis=1)
    T = A[inner]
    j_max = max(1, int(np.floor(p.a / 16.0 / p.Delta + 1e-9)))
    base_vals: Dict[int, np.ndarray] = {}

    def at(idx: int) -> np.ndarray:
        if idx not in base_vals:
            base_vals[idx] = g.values(X[idx], T)
        return base_vals[idx]

    matches = 0
    bad: List[FuzzViolation] = []
    n_bad = 0
    for trial in range(trials):
        mode = FUZZ_MODES[int(rng.integers(0, len(FUZZ_MODES)))]
        i = int(rng.integers(0, X.shape[0]))
        j = i
        if mode.startswith("pair"):
            j = int(rng.integers(0, X.shape[0] - 1))
            j = j + 1 if j >= i else j
        w = np.zeros(p.k)
        if mode.endswith("grid"):
            step = int(rng.integers(1, j_max + 1)) * (1 if rng.random() < 0.5 else -1)
            w[-1] = step * p.Delta
        elif mode == "pair-random":
            w = rng.uniform(-p.a / 8.0, p.a / 8.0, size=p.k)
        moved = at(i) if not np.any(w) else g.values(X[i], T + w)
        mismatch = float(np.max(np.abs(moved - at(j))))
        if mismatch >= match_tol:
            continue
        matches += 1
        d = float(np.atleast_1d(flow.dist(X[i], X[j]))[0])
        if float(np.max(np.abs(w))) < w_tol and d < p.delta:
            continue
        n_bad += 1
        if len(bad) < keep:
            bad.append(FuzzViolation(trial, mode, i, j, tuple(float(v) for v in w), mismatch, d))
    debug("fuzz", f"trials={trials} matches={matches} violations={n_bad}")
    return FuzzReport(int(trials), matches, n_bad, tuple(bad))


# ---------- Marker perturbation ----------
@dataclass(frozen=True, eq=False)
class MarkerRegion:
    flow: Flow
    sections: Tuple[LocalSection, ...]
    radius: float

    def weight(self, state) -> float:
        """q(state) = clip(1 - dist(state, base)/radius, 0, 1), largest over the section bases."""
        best = 0.0
        for sec in self.sections:
            d = float(np.atleast_1d(self.flow.dist(state, sec.p))[0])
            best = max(best, min(1.0, max(0.0, 1.0 - d / self.radius)))
        return best


def marker_region(flow: Flow, sections: Sequence[LocalSection]) -> MarkerRegion:
    """q is supported within half the state distance a time step of a reaches from each base."""
    if not sections:
        raise PreconditionError("marker region needs at least one section")
    reach = []
    for sec in sections:
        for i in range(flow.k):
            for sign in (1.0, -1.0):
                t = np.zeros(flow.k)
                t[i] = sign * sec.a
                reach.append(float(np.atleast_1d(flow.dist(flow.act(t, sec.p), sec.p))[0]))
    return MarkerRegion(flow, tuple(sections), 0.5 * min(reach))


def _g1_values(flow: Flow, region: MarkerRegion, q, f1: EnsembleFunction, g: MainLemmaMap, x, pts: np.ndarray) -> np.ndarray:
    a = g.params.a
    vals = f1.values(x, pts).copy()
    lo = pts.min(axis=0) - a - MARKER_TOL
    hi = pts.max(axis=0) + MARKER_TOL
    markers = [s for sec in region.sections for s in marker_set(flow, sec, x, lo, hi)]
    if len(markers) > 1:
        S = np.array(markers)
        gaps = np.max(np.abs(S[:, None, :] - S[None, :, :]), axis=2)
        np.fill_diagonal(gaps, np.inf)
        if float(gaps.min()) < a:
            raise SectionError("overlapping marker cubes")
    for s in markers:
        local = pts - s
        inside = np.all((local >= -MARKER_TOL) & (local <= a + MARKER_TOL), axis=1)
        if not inside.any():
            continue
        sx = flow.act(s, x)
        weight = float(q(sx))
        if weight == 0.0:
            continue
        cube = np.clip(local[inside], 0.0, a)
        vals[inside] += weight * (g.values(sx, cube) - f1.values(sx, cube))
    return vals


def marker_perturb_g1(flow: Flow, region: MarkerRegion, q, f1: EnsembleFunction, g: MainLemmaMap, x, window: GridSpec) -> GridFunction:
    """
    g1(x)(t) = f1(x)(t) + q(sx) * (g(sx)(t - s) - f1(sx)(t - s)) on every
    marker cube s + [0,a]^k, and f1(x)(t) elsewhere.
    """
    q = region.weight if q is None else q
    vals = _g1_values(flow, region, q, f1, g, np.asarray(x, dtype=float), window.points())
    return GridFunction(window, vals, tau=1.0, slack=_g1_slack(g))


def _g1_slack(g: MainLemmaMap) -> float:
    return min(1.0, g.tau) * float(g.params.eval_grid.spacing.max())


def g1_ensemble(flow: Flow, region: MarkerRegion, f1: EnsembleFunction, g: MainLemmaMap, q=None) -> EnsembleFunction:
    weight = region.weight if q is None else q

    def evaluate(x, pts):
        return _g1_values(flow, region, weight, f1, g, x, pts)
    return EnsembleFunction(k=flow.k, tau=1.0, slack=_g1_slack(g), name="g1", evaluate=evaluate)


def sample_near_base(flow: Flow, base, radius: float, n: int, seed: int) -> np.ndarray:
    """States act(t, base) with t uniform in [-radius, radius]^k."""
    t = np.random.default_rng(seed).uniform(-radius, radius, size=(n, flow.k))
    return np.asarray(flow.act(t, np.asarray(base, dtype=float).reshape(flow.state_dim))).reshape(n, flow.state_dim)


# ---------- Open-set witnesses ----------
def verify_ga(g1: EnsembleFunction, A_samples, grid: GridSpec) -> Tuple[bool, float]:
    """Every sampled g1(x) is non-constant on the grid."""
    spreads = [g1.on_grid(x, grid).spread() for x in np.atleast_2d(A_samples)]
    low = min(spreads) if spreads else 0.0
    return low > SPREAD_TOL, float(low)


def check_section_gap(delta: float, base_gap: float) -> None:
    if not delta < base_gap:
        raise PreconditionError("delta too large for section pair")


def verify_gbc(g1: EnsembleFunction, B_samples, C_samples, window: GridSpec, m_max: int, delta: float, base_gap: float) -> Tuple[bool, float]:
    """g1(B) and g1(C) stay apart: smallest lip1 distance over all pairs."""
    check_section_gap(delta, base_gap)
    fb = [g1.on_grid(x, window) for x in np.atleast_2d(B_samples)]
    fc = [g1.on_grid(y, window) for y in np.atleast_2d(C_samples)]
    low = min(lip1_metric(u, v, m_max) for u in fb for v in fc)
    return low > 0.0, float(low)


def g1_equivariance_residual(g1: EnsembleFunction, flow: Flow, x, offset: Sequence[int], window: GridSpec) -> float:
    """max_t |g1(act(r, x))(t) - g1(x)(t + r)| for the grid-aligned shift r = offset * spacing."""
    r = np.asarray(offset, dtype=float) * window.spacing
    moved = g1.on_grid(flow.act(r, x), window).as_array()
    here = g1.on_grid(x, window).as_array()
    left, right = [], []
    for m, n in zip(offset, window.shape):
        left.append(slice(max(0, -m), n - max(0, m)))
        right.append(slice(max(0, m), n + min(0, m)))
    return float(np.max(np.abs(moved[tuple(left)] - here[tuple(right)])))


# ---------- Plot data ----------
def column_points(params: MainLemmaParams, samples: int = 65) -> np.ndarray:
    col = np.full((samples, params.k - 1), params.a / 2.0)
    return np.column_stack([col, np.linspace(0.0, params.a, samples)])


def cross_sections(g: MainLemmaMap, g1: Optional[EnsembleFunction], x, samples: int = 65) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Values of g0 (its McShane extension), g and g1 along the A column through the cube."""
    pts = column_points(g.params, samples)
    s = pts[:, -1]
    st = g.state_data(x)
    out = {
        "f1": (s, g.f1.values(x, pts)),
        "g0": (s, mcshane_extend(st.anchors, pts, check=False)),
        "g": (s, g.values(x, pts)),
    }
    if g1 is not None:
        out["g1"] = (s, g1.values(x, pts))
    return out
