# services/borel_embed.py
"""
Equivariant embedding x -> Phi(x) with Phi(x)(t) = phi(act(t, x)).

phi is built from a lacunary cross-section S: within orbit distance 1 of
its nearest section point s a state scores (1 - rho) / alpha(s), and 0
elsewhere. Each Phi(x) is 1-Lipschitz in t, equivariant under the shift,
and distinct states give distinct functions.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from services.errors import PreconditionError
from services.flows import CrossSection, Flow, LogisticFlow, TorusFlow, orbit_lattice_cross_section, singleton_cross_section
from services.lipfun import DEFAULT_M_MAX, GridFunction, GridSpec, lip1_metric, lip_const_estimate
from services.runlog import debug

DEFAULT_WINDOW_RADIUS = 20.0
DEFAULT_LATTICE_SPACING = 8.0


def default_window(k: int) -> GridSpec:
    """[-20, 20]^k with 161 points per axis for k=1 and 41 otherwise."""
    return GridSpec.symmetric(k, DEFAULT_WINDOW_RADIUS, 161 if k == 1 else 41)


def section_for_flow(flow: Flow, base=None) -> CrossSection:
    if isinstance(flow, TorusFlow):
        return singleton_cross_section(flow, np.zeros(flow.k) if base is None else base)
    if isinstance(flow, LogisticFlow):
        return orbit_lattice_cross_section(flow, 0.0 if base is None else base, DEFAULT_LATTICE_SPACING)
    raise PreconditionError(f"no cross-section known for flow {flow.name}")


# ---------- Observable ----------
def project_to_section(section: CrossSection, x) -> Optional[Tuple[np.ndarray, float]]:
    """(s, rho) when x lies within orbit distance 1 of section point s; None otherwise."""
    s, rho = section.nearest(x)
    r = float(rho[0])
    if r < 1.0:
        return s[0], r
    return None


def _phi_batch(section: CrossSection, states: np.ndarray) -> np.ndarray:
    s, rho = section.nearest(states)
    out = np.zeros(rho.shape[0])
    near = rho < 1.0
    if near.any():
        out[near] = (1.0 - rho[near]) / section.alpha(s[near])
    return out


def phi_observable(section: CrossSection, x) -> float:
    hit = project_to_section(section, x)
    if hit is None:
        return 0.0
    s, rho = hit
    return float((1.0 - rho) / section.alpha(s)[0])


def embed_point(section: CrossSection, flow: Flow, x, window: GridSpec) -> GridFunction:
    if not np.allclose(window.lower, -window.upper, atol=1e-12):
        raise PreconditionError("embedding window must be symmetric around 0")
    states = flow.act(window.points(), np.asarray(x, dtype=float).reshape(flow.state_dim))
    return GridFunction(window, _phi_batch(section, np.asarray(states).reshape(-1, flow.state_dim)), tau=1.0)


# ---------- Verification ----------
@dataclass(frozen=True)
class EmbeddingReport:
    max_lipschitz_violation: float
    max_equivariance_residual: float
    min_pairwise_separation: float
    n_points: int
    n_equivariance_trials: int
    seed: int
    zero_separation_pairs: Tuple[Tuple[int, int], ...] = ()

    def passed(self, lip_tol: float = 1e-9, equivariance_tol: float = 1e-12) -> bool:
        return (
            self.max_lipschitz_violation <= lip_tol
            and self.max_equivariance_residual <= equivariance_tol
            and self.min_pairwise_separation > 0.0
        )


def _shift_slices(offset: Sequence[int], shape: Sequence[int]) -> Tuple[tuple, tuple]:
    """Index slices (left, right) with left[t] paired to right[t + offset]."""
    left, right = [], []
    for m, n in zip(offset, shape):
        if m >= 0:
            left.append(slice(0, n - m))
            right.append(slice(m, n))
        else:
            left.append(slice(-m, n))
            right.append(slice(0, n + m))
    return tuple(left), tuple(right)


def equivariance_residual(section: CrossSection, flow: Flow, x, offset: Sequence[int], window: GridSpec) -> float:
    """max_t |Phi(act(r, x))(t) - Phi(x)(t + r)| with r = offset * spacing."""
    r = np.asarray(offset, dtype=float) * window.spacing
    moved = embed_point(section, flow, flow.act(r, x), window).as_array()
    here = embed_point(section, flow, x, window).as_array()
    left, right = _shift_slices(offset, window.shape)
    return float(np.max(np.abs(moved[left] - here[right])))


def verify_embedding(
    section: CrossSection,
    flow: Flow,
    points,
    window: GridSpec,
    m_max: int = DEFAULT_M_MAX,
    seed: int = 0,
    trials: int = 100,
) -> EmbeddingReport:
    pts = np.asarray(points, dtype=float).reshape(-1, flow.state_dim)
    if pts.shape[0] < 2:
        raise PreconditionError("verify_embedding needs at least 2 points")
    embedded = [embed_point(section, flow, p, window) for p in pts]

    lip_excess = max(max(0.0, lip_const_estimate(f, seed=seed) - 1.0) for f in embedded)

    rng = np.random.default_rng(seed)
    reach = np.asarray(window.shape) // 4
    eq_worst = 0.0
    for _ in range(trials):
        i = int(rng.integers(0, pts.shape[0]))
        offset = [int(rng.integers(-m, m + 1)) for m in reach]
        eq_worst = max(eq_worst, equivariance_residual(section, flow, pts[i], offset, window))

    sep = float("inf")
    zeros: List[Tuple[int, int]] = []
    for i in range(len(embedded)):
        for j in range(i + 1, len(embedded)):
            d = lip1_metric(embedded[i], embedded[j], m_max)
            if d <= 0.0:
                zeros.append((i, j))
            sep = min(sep, d)
    debug("borel", f"n={pts.shape[0]} lip_excess={lip_excess:.3e} eq={eq_worst:.3e} sep={sep:.3e}")
    return EmbeddingReport(lip_excess, eq_worst, sep, int(pts.shape[0]), int(trials), int(seed), tuple(zeros))


@dataclass(frozen=True)
class FixedPointReport:
    n_fixed: int
    max_abs_value: float
    min_separation: float

    @property
    def passed(self) -> bool:
        return self.n_fixed == 0 or (self.max_abs_value == 0.0 and self.min_separation > 0.0)


def fixed_point_report(section: CrossSection, flow: Flow, window: GridSpec, samples, m_max: int = DEFAULT_M_MAX) -> FixedPointReport:
    """Fixed points must embed as the constant 0 and stay apart from every non-fixed sample."""
    fixed = flow.fixed_points
    if fixed.shape[0] == 0:
        return FixedPointReport(0, 0.0, float("inf"))
    pts = np.asarray(samples, dtype=float).reshape(-1, flow.state_dim)
    others = [embed_point(section, flow, p, window) for p in pts if not bool(np.asarray(flow.is_fixed(p)))]
    worst, sep = 0.0, float("inf")
    for p in fixed:
        f = embed_point(section, flow, p, window)
        worst = max(worst, float(np.max(np.abs(f.values))))
        for g in others:
            sep = min(sep, lip1_metric(f, g, m_max))
    return FixedPointReport(int(fixed.shape[0]), worst, sep)
