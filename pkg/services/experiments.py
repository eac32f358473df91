# services/experiments.py
"""
Subcommand runners. Each takes a validated experiment config and returns
the report rows plus the files it wrote; exit codes are decided by the
caller from the rows.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from services.borel_embed import default_window, embed_point, fixed_point_report, section_for_flow, verify_embedding
from services.errors import ConfigError, PreconditionError
from services.extension import mcshane_extend, mcshane_lower, random_lipschitz_anchors
from services.flows import Flow, local_section_at
from services.genvec import RANK_TOL, corrupt_periodic
from services.lipfun import GridFunction, GridSpec, gradient_bound_check, lip_const_estimate
from services.mollify import DomainDescriptor, MollifyParams, mollify_fn, second_difference_report
from services.presets import build_flow, get_preset
from services.reports import ReportRow, above, at_most, below, is_grid_csv, read_grid_function, write_grid_function, write_report, write_series, write_vector_set
from services.runlog import debug
from services.topo_embed import (
    COVER_GRID_POINTS,
    MAX_COVER,
    blend,
    check_section_gap,
    choose_main_lemma_params,
    cross_sections,
    edge_points,
    fit_cover,
    g0_deviation,
    g1_ensemble,
    g1_equivariance_residual,
    gaussian_ensemble,
    main_lemma_g,
    marker_perturb_g1,
    marker_region,
    sample_near_base,
    shift_rigidity_fuzz,
    target_ensemble,
    verify_ga,
    verify_gbc,
)

GBC_WINDOW_RADIUS = 2.0
GBC_WINDOW_POINTS = 33
GBC_M_MAX = 2


@dataclass
class RunResult:
    rows: List[ReportRow] = field(default_factory=list)
    artifacts: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def _out_dir(cfg) -> Path:
    return Path(cfg.out) / cfg.subcommand


def _flow(cfg) -> Flow:
    return build_flow(cfg.flow, cfg.scale)


def _base(cfg, flow: Flow) -> np.ndarray:
    """Base point in the flow's coordinates (the interval for logistic), returned as a state."""
    base = cfg.base if cfg.base is not None else get_preset(cfg.flow).base
    base = np.asarray(base, dtype=float).reshape(-1)
    if base.size != flow.state_dim:
        raise ConfigError(f"base has {base.size} coordinates, flow '{cfg.flow}' needs {flow.state_dim}")
    return flow.from_coordinates(base).reshape(-1)


def smooth_field(k: int, tau: float, seed: int, terms: int = 4) -> Callable[[np.ndarray], np.ndarray]:
    """0.5 + sum_j a_j sin(w_j . b + c_j) with sum_j a_j |w_j| = tau and |w_j|_inf <= 2."""
    rng = np.random.default_rng(seed)
    omegas = rng.uniform(-2.0, 2.0, size=(terms, k))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=terms)
    amps = rng.uniform(0.5, 1.0, size=terms)
    amps *= tau / float(np.sum(amps * np.linalg.norm(omegas, axis=1)))

    def field(pts: np.ndarray) -> np.ndarray:
        return 0.5 + np.sin(np.atleast_2d(pts) @ omegas.T + phases) @ amps
    return field


# ---------- embed-borel ----------
def run_embed_borel(cfg) -> RunResult:
    flow = _flow(cfg)
    section = section_for_flow(flow, _base(cfg, flow))
    window = default_window(flow.k)
    points = flow.sample_states(cfg.points, cfg.seed)
    report = verify_embedding(section, flow, points, window, cfg.m_max, cfg.seed, trials=cfg.eq_trials)
    out = _out_dir(cfg)
    res = RunResult()
    for i, x in enumerate(points):
        res.artifacts.append(write_grid_function(out / f"phi_{i:03d}.csv", embed_point(section, flow, x, window)))
    res.rows += [
        at_most("lipschitz_excess", "each embedded orbit function is 1-Lipschitz", report.max_lipschitz_violation, 1e-9),
        at_most("equivariance_residual", "Phi(act(r,x))(t) = Phi(x)(t+r)", report.max_equivariance_residual, 1e-12),
        above("min_pairwise_separation", "distinct states embed apart in lip1", report.min_pairwise_separation, 0.0),
        at_most("zero_separation_pairs", "no sampled pair collapses", len(report.zero_separation_pairs), 0),
    ]
    if flow.fixed_points.shape[0]:
        fx = fixed_point_report(section, flow, window, points, cfg.m_max)
        res.rows += [
            at_most("fixed_point_value", "fixed points embed as the constant 0", fx.max_abs_value, 0.0),
            above("fixed_point_separation", "fixed points stay apart from moving states", fx.min_separation, 0.0),
        ]
    return res


# ---------- mcshane ----------
def run_mcshane(cfg) -> RunResult:
    rng = np.random.default_rng(cfg.seed)
    worst_anchor, worst_excess, worst_bracket = 0.0, 0.0, 0.0
    res = RunResult()
    for trial in range(cfg.anchor_sets):
        k = 1 + trial % 2
        n = int(rng.integers(2, cfg.max_anchors + 1))
        tau = float(rng.uniform(0.2, 0.95))
        anchors = random_lipschitz_anchors(k, n, tau, seed=cfg.seed + trial)
        grid = GridSpec.cube(k, 1.0, 33)
        upper = mcshane_extend(anchors, grid.points())
        lower = mcshane_lower(anchors, grid.points())
        ext = GridFunction(grid, upper, tau)
        worst_anchor = max(worst_anchor, float(np.max(np.abs(mcshane_extend(anchors, anchors.points) - anchors.values))))
        worst_excess = max(worst_excess, lip_const_estimate(ext) - tau)
        worst_bracket = max(worst_bracket, float(np.max(upper - lower)))
        if trial == 0:
            res.artifacts.append(write_grid_function(_out_dir(cfg) / "extension_000.csv", ext))
    res.rows += [
        at_most("anchor_residual", "extension reproduces anchor values", worst_anchor, 1e-12),
        at_most("lipschitz_excess", "extension keeps the anchor budget", worst_excess, 1e-9),
        at_most("envelope_order", "upper extension never exceeds the lower envelope", worst_bracket, 1e-12),
    ]
    return res


# ---------- mollify ----------
def run_mollify(cfg) -> RunResult:
    k = cfg.k
    grid = GridSpec.cube(k, 1.0, 33)
    dom = DomainDescriptor(1.0, k)
    params = MollifyParams(delta=0.05, epsilon=0.05, tau=0.9, quad_points_per_axis=cfg.mollify_quad_points)
    spacing = float(grid.spacing.max())
    boundary = np.any((grid.points() <= 0.0) | (grid.points() >= 1.0), axis=1)
    worst_edge, worst_sup, worst_lip, worst_curv = 0.0, 0.0, 0.0, 0.0
    res = RunResult()
    for i in range(cfg.mollify_inputs):
        phi = GridFunction.sample(grid, smooth_field(k, 0.9, cfg.seed + i), tau=0.9)
        Phi = mollify_fn(phi, dom, params)
        worst_edge = max(worst_edge, float(np.max(np.abs(Phi.values[boundary] - phi.values[boundary]))))
        worst_sup = max(worst_sup, float(np.max(np.abs(Phi.values - phi.values))))
        worst_lip = max(worst_lip, lip_const_estimate(Phi, seed=cfg.seed))
        smooth = second_difference_report(Phi, dom, params)
        worst_curv = max(worst_curv, smooth.max_second_difference / smooth.bound if smooth.points_checked else 0.0)
        if i == 0:
            res.artifacts.append(write_grid_function(_out_dir(cfg) / "phi_000.csv", phi))
            res.artifacts.append(write_grid_function(_out_dir(cfg) / "mollified_000.csv", Phi))
    const = GridFunction(grid, np.full(grid.count, 0.37), 0.9)
    const_err = float(np.max(np.abs(mollify_fn(const, dom, params).values - 0.37)))
    res.rows += [
        at_most("boundary_preserved", "mollified values equal the input on the cube boundary", worst_edge, 0.0),
        below("sup_deviation", "mollified function stays within delta", worst_sup, params.delta),
        at_most("lipschitz_estimate", "mollified budget tau + epsilon", worst_lip, params.tau + params.epsilon + 2.0 * spacing),
        at_most("second_difference", "interior second differences within bound (ratio)", worst_curv, 1.0),
        at_most("constant_input", "constants are reproduced", const_err, 1e-10),
    ]
    return res


# ---------- main lemma ----------
def _pipeline(cfg, flow: Flow):
    f = target_ensemble(flow, cfg.amplitude)
    f1 = blend(f, gaussian_ensemble(flow, cfg.bwidth), cfg.delta)
    coarse = GridSpec.cube(flow.k, cfg.a, COVER_GRID_POINTS)
    cover, diam = fit_cover(flow, f1, cfg.delta, coarse, cfg.seed, max_elements=cfg.M or MAX_COVER, ratio=cfg.cover_ratio)
    params = choose_main_lemma_params(cfg.a, cfg.delta, f1.tau, cover.M, k=flow.k, edge_gap_ratio=cfg.edge_gap_ratio)
    g, uset = main_lemma_g(f1, cover, params, cfg.seed, quad_points_per_axis=cfg.quad_points)
    debug("main-lemma", f"cover M={cover.M} radius={diam.radius:.4g} N={params.N}")
    return f, f1, params, cover, diam, g, uset


def run_main_lemma(cfg) -> RunResult:
    flow = _flow(cfg)
    f, f1, params, cover, diam, g, uset = _pipeline(cfg, flow)
    grid = params.eval_grid
    edge = edge_points(grid, params.a)
    states = flow.sample_states(cfg.states, cfg.seed + 1)
    dev, edge_err, spread, claim, budget = 0.0, 0.0, np.inf, 0.0, 0.0
    for x in states:
        gx = g.on_grid(x, grid)
        dev = max(dev, float(np.max(np.abs(gx.values - f1.values(x, grid.points())))))
        edge_err = max(edge_err, float(np.max(np.abs(g.values(x, edge) - f1.values(x, edge)))))
        on_A = g.values(x, params.A_points)
        spread = min(spread, float(on_A.max() - on_A.min()))
        claim = max(claim, g0_deviation(x, f1, g.state_data(x).anchors))
        budget = max(budget, g.state_tau(x))
    fuzz = shift_rigidity_fuzz(g, trials=cfg.trials, seed=cfg.seed, flow=flow, match_tol=cfg.match_tol, w_tol=cfg.w_tol, pool=cfg.pool)
    bad = g.with_vectors(corrupt_periodic(uset, cfg.corrupt_period, params.geometry))
    control = shift_rigidity_fuzz(bad, trials=cfg.trials, seed=cfg.seed, flow=flow, match_tol=cfg.match_tol, w_tol=cfg.w_tol, pool=cfg.pool)

    res = RunResult()
    out = _out_dir(cfg)
    res.rows += [
        below("approximation", "max |g - f1| below 2 delta", dev, 2.0 * cfg.delta),
        at_most("edge_agreement", "g equals f on Edge anchors", edge_err, 1e-12),
        above("nonconstant_on_A", "g(x) is non-constant on A", spread, 1e-9),
        below("anchor_deviation", "g0 within delta/2 of f on anchors", claim, cfg.delta / 2.0),
        below("smoothed_budget", "per-state Lipschitz budget below 1", budget, 1.0),
        at_most("cover_size", "cover elements within the vector budget", cover.M, cfg.M or MAX_COVER),
        below("cover_element_diameter", "each cover element has diameter below delta", 2.0 * diam.radius, cfg.delta),
        below("cover_diameter", "f varies less than delta/8 on each cover element", diam.worst, diam.bound),
        at_most("shift_rigidity", "matching translates force w = 0 and nearby states", fuzz.violations, 0),
        above("rigidity_negative_control", "periodic vectors are caught by the fuzz", control.violations, 0),
    ]
    for key in ("cond2", "cond3", "cond4"):
        res.rows.append(above(f"genericity_{key}", f"smallest singular value for {key}", uset.certificates[key], RANK_TOL))
    res.artifacts += write_vector_set(out / "uset.csv", uset)
    res.artifacts.append(write_grid_function(out / "g_000.csv", g.on_grid(states[0], grid)))
    res.artifacts.append(write_grid_function(out / "f1_000.csv", f1.on_grid(states[0], grid)))
    if cfg.plot:
        for name, (xs, ys) in cross_sections(g, None, states[0]).items():
            res.artifacts.append(write_series(out / f"cross_{name}.csv", xs, ys))
    debug("main-lemma", f"fuzz matches={fuzz.matches} control violations={control.violations}")
    return res


# ---------- embed-topo ----------
def run_embed_topo(cfg) -> RunResult:
    flow = _flow(cfg)
    p = _base(cfg, flow)
    q = np.asarray(flow.act(np.full(flow.k, 0.5 * flow.group_scale), p))
    base_gap = float(np.atleast_1d(flow.dist(p, q))[0])
    check_section_gap(cfg.delta, base_gap)

    f, f1, params, cover, diam, g, uset = _pipeline(cfg, flow)
    sec_b = local_section_at(flow, p, params.a, seed=cfg.seed)
    sec_c = local_section_at(flow, q, params.a, seed=cfg.seed + 1)
    region = marker_region(flow, [sec_b, sec_c])
    g1 = g1_ensemble(flow, region, f1, g)
    window = GridSpec.symmetric(flow.k, GBC_WINDOW_RADIUS, GBC_WINDOW_POINTS)
    r = params.a / 16.0

    A = sample_near_base(flow, p, r, cfg.a_samples, cfg.seed + 2)
    B = sample_near_base(flow, p, r, cfg.bc_samples, cfg.seed + 3)
    C = sample_near_base(flow, q, r, cfg.bc_samples, cfg.seed + 4)
    ga_ok, ga_spread = verify_ga(g1, A, window)
    gbc_ok, gbc_min = verify_gbc(g1, B, C, window, GBC_M_MAX, cfg.delta, base_gap)

    dev = 0.0
    for x in np.vstack([B, C]):
        dev = max(dev, float(np.max(np.abs(g1.on_grid(x, window).values - f.on_grid(x, window).values))))
    rng = np.random.default_rng(cfg.seed)
    eq = 0.0
    for _ in range(cfg.g1_eq_trials):
        x = B[int(rng.integers(0, len(B)))]
        offset = [int(rng.integers(-8, 9)) for _ in range(flow.k)]
        eq = max(eq, g1_equivariance_residual(g1, flow, x, offset, window))
    cube = params.eval_grid
    spliced = marker_perturb_g1(flow, region, None, f1, g, p, cube)
    at_base = float(np.max(np.abs(spliced.values - g.values(p, cube.points()))))

    res = RunResult()
    out = _out_dir(cfg)
    res.rows += [
        above("open_set_A", "g1 is non-constant on every A sample (min spread)", ga_spread, 1e-9),
        above("open_set_BC", "g1(B) and g1(C) are disjoint (min lip1 distance)", gbc_min, 0.0),
        at_most("perturbation_size", "max |g1 - f| at most 4 delta", dev, 4.0 * cfg.delta),
        at_most("g1_equivariance", "g1(act(r,x))(t) = g1(x)(t+r)", eq, 1e-9),
        at_most("splice_at_base", "g1 equals g on the base marker cube", at_base, 1e-12),
    ]
    res.artifacts.append(write_grid_function(out / "g1_B_000.csv", marker_perturb_g1(flow, region, None, f1, g, B[0], window)))
    res.artifacts.append(write_grid_function(out / "g1_C_000.csv", marker_perturb_g1(flow, region, None, f1, g, C[0], window)))
    if cfg.plot:
        for name, (xs, ys) in cross_sections(g, g1, p).items():
            res.artifacts.append(write_series(out / f"cross_{name}.csv", xs, ys))
    debug("embed-topo", f"GA={ga_ok} GBC={gbc_ok} dev={dev:.3e} eq={eq:.3e}")
    return res


# ---------- verify ----------
def _collect_inputs(inputs: List[str]) -> List[Path]:
    files: List[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(f for f in p.rglob("*.csv") if is_grid_csv(f))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"verify input not found: {p}")
    if not files:
        raise PreconditionError("verify found no grid function CSVs")
    return files


def run_verify(cfg) -> RunResult:
    res = RunResult()
    for path in _collect_inputs(cfg.inputs):
        f = read_grid_function(path, cfg.tau, cfg.slack)
        finite = bool(np.all(np.isfinite(f.values)))
        name = path.stem
        res.rows.append(ReportRow(f"{name}:finite", "all values finite", float(finite), 1.0, finite))
        if not finite:
            continue
        low, high = float(f.values.min()), float(f.values.max())
        res.rows.append(ReportRow(f"{name}:range", "values inside [0,1]", max(-low, high - 1.0, 0.0), 0.0, low >= 0.0 and high <= 1.0))
        res.rows.append(at_most(f"{name}:lipschitz", "estimate within tau + slack", lip_const_estimate(f, seed=cfg.seed), f.tau + f.slack + 1e-9))
        grad = gradient_bound_check(f, f.tau + f.slack)
        res.rows.append(at_most(f"{name}:gradient", "central differences within tau + slack", grad.max_norm, grad.tau + grad.tol))
    return res


RUNNERS: Dict[str, Callable] = {
    "embed-borel": run_embed_borel,
    "embed-topo": run_embed_topo,
    "main-lemma": run_main_lemma,
    "mcshane": run_mcshane,
    "mollify": run_mollify,
    "verify": run_verify,
}


def execute(cfg) -> RunResult:
    runner = RUNNERS.get(cfg.subcommand)
    if runner is None:
        raise ConfigError(f"unknown subcommand '{cfg.subcommand}'")
    res = runner(cfg)
    res.artifacts.append(write_report(_out_dir(cfg) / "report.csv", res.rows))
    return res
