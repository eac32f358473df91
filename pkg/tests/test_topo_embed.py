import numpy as np
import pytest

from services.errors import BudgetError, PreconditionError
from services.flows import local_section_at, logistic_interval_flow, torus_translation_flow
from services.genvec import corrupt_periodic
from services.lipfun import GridSpec, lip_const_estimate
from services.topo_embed import (
    COVER_GRID_POINTS,
    blend,
    build_cover,
    check_section_gap,
    choose_main_lemma_params,
    cover_diameter_check,
    cross_sections,
    fit_cover,
    g0_deviation,
    g1_ensemble,
    g1_equivariance_residual,
    gaussian_base,
    gaussian_ensemble,
    main_lemma_g,
    marker_perturb_g1,
    marker_region,
    min_bandwidth,
    sample_near_base,
    shift_rigidity_fuzz,
    target_ensemble,
    verify_ga,
    verify_gbc,
)

BASE = np.array([0.1, 0.1])


@pytest.fixture(scope="module")
def pipeline():
    flow = torus_translation_flow(2, 8.0)
    f = target_ensemble(flow)
    f1 = blend(f, gaussian_ensemble(flow), 0.4)
    cover, _ = fit_cover(flow, f1, 0.4, GridSpec.cube(2, 1.0, COVER_GRID_POINTS))
    params = choose_main_lemma_params(1.0, 0.4, f1.tau, cover.M, k=2)
    g, uset = main_lemma_g(f1, cover, params, seed=0)
    return flow, f1, params, cover, g, uset


@pytest.fixture(scope="module")
def markers(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    q = flow.act(np.full(2, 4.0), BASE)
    sections = [local_section_at(flow, BASE, params.a, samples=2000), local_section_at(flow, q, params.a, samples=2000, seed=1)]
    region = marker_region(flow, sections)
    return q, region, g1_ensemble(flow, region, f1, g)


def test_params_for_reference_setting():
    p = choose_main_lemma_params(1.0, 0.4, 0.5, 1, k=2)
    assert (p.N, p.L, p.Q) == (225, 49, 113)
    assert p.Delta == 2.0 ** -8
    assert p.eta == pytest.approx(min(0.05, 0.5 * (1 / 16) / 8, 0.5 * 2.0 ** -8 / 4))
    assert p.A_points.shape == (225, 2)
    np.testing.assert_allclose(p.A_points[:, 0], 0.5)


def test_params_reject_bad_budget():
    with pytest.raises(PreconditionError, match="tau"):
        choose_main_lemma_params(1.0, 0.4, 1.0, 1)


def test_gaussian_base_bandwidth_floor():
    flow = torus_translation_flow(2, 8.0)
    with pytest.raises(PreconditionError, match="bwidth"):
        gaussian_ensemble(flow, bwidth=0.5 * min_bandwidth(2))


def test_gaussian_base_is_equivariant_and_flat():
    flow = torus_translation_flow(1, 8.0)
    f0 = gaussian_ensemble(flow)
    x = np.array([0.3])
    t = np.linspace(-2.0, 2.0, 17).reshape(-1, 1)
    r = 0.75
    np.testing.assert_allclose(f0.values(flow.act(r, x), t), f0.values(x, t + r), atol=1e-12)
    vals = f0.values(x, t)
    assert np.all(np.abs(vals - 0.5) < 0.5)


@pytest.mark.parametrize("flow", [torus_translation_flow(1, 8.0), torus_translation_flow(2, 8.0), logistic_interval_flow()], ids=lambda f: f.name)
def test_gaussian_base_lipschitz_estimate(flow):
    window = GridSpec.symmetric(flow.k, 4.0, 33)
    for x in flow.sample_states(20, 11):
        assert lip_const_estimate(gaussian_base(flow, min_bandwidth(flow.k), x, window)) <= 0.52


def test_target_is_equivariant_and_close_to_half():
    flow = torus_translation_flow(2, 8.0)
    f = target_ensemble(flow, 0.03)
    x = np.array([0.3, 0.7])
    t = GridSpec.symmetric(2, 2.0, 9).points()
    np.testing.assert_allclose(f.values(flow.act([1.0, -2.0], x), t), f.values(x, t + [1.0, -2.0]), atol=1e-12)
    assert np.max(np.abs(f.values(x, t) - 0.5)) <= 0.03 + 1e-12
    assert f.tau == pytest.approx(2 * 0.03 * np.pi / (np.sqrt(2) * 8.0))
    with pytest.raises(PreconditionError, match="amplitude"):
        target_ensemble(flow, 0.0)


def test_blend_declares_convex_budget():
    flow = torus_translation_flow(2, 8.0)
    f, f0 = target_ensemble(flow), gaussian_ensemble(flow)
    f1 = blend(f, f0, 0.25)
    assert f1.tau == pytest.approx(0.75 * f.tau + 0.25 * 0.5)
    x, t = np.array([0.4, 0.2]), GridSpec.cube(2, 1.0, 5).points()
    np.testing.assert_allclose(f1.values(x, t), 0.75 * f.values(x, t) + 0.25 * f0.values(x, t), atol=1e-15)
    assert np.max(np.abs(f1.values(x, t) - f.values(x, t))) > 0.0
    with pytest.raises(PreconditionError, match="blend delta"):
        blend(f, f0, 1.5)


def test_cover_weights_are_a_local_partition(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    X = flow.sample_states(30, 9)
    h = cover.weights(X)
    np.testing.assert_allclose(h.sum(axis=1), 1.0)
    assert np.all(h.max(axis=1) > 0.0)
    for m, (p, r) in enumerate(zip(cover.anchors, cover.radii)):
        far = np.atleast_1d(flow.dist(X, p)) >= r
        assert np.all(h[far, m] == 0.0)


def test_cover_elements_are_smaller_than_delta(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    assert cover.M == params.M
    assert 2.0 * float(cover.radii.max()) < 0.4
    report = cover_diameter_check(cover, f1, params.eval_grid, 0.4, pool=8)
    assert report.passed
    assert report.bound == pytest.approx(0.05)


def test_cover_fit_respects_the_element_cap():
    flow = torus_translation_flow(2, 8.0)
    f1 = blend(target_ensemble(flow), gaussian_ensemble(flow), 0.4)
    with pytest.raises(BudgetError, match="cover needs"):
        fit_cover(flow, f1, 0.4, GridSpec.cube(2, 1.0, COVER_GRID_POINTS), max_elements=2)


def test_cover_rejects_bad_radius():
    with pytest.raises(PreconditionError, match="radius"):
        build_cover(torus_translation_flow(2, 8.0), 0.0)


def test_main_lemma_rejects_cover_of_other_size(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    other = choose_main_lemma_params(1.0, 0.4, f1.tau, cover.M + 1, k=2)
    with pytest.raises(PreconditionError, match="cover has"):
        main_lemma_g(f1, cover, other, seed=0)


def test_g_agrees_with_f_on_edge_and_stays_close(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    grid = params.eval_grid
    pts = grid.points()
    edge = pts[np.any((pts <= 0.0) | (pts >= params.a), axis=1)]
    for x in flow.sample_states(3, 5):
        np.testing.assert_allclose(g.values(x, edge), f1.values(x, edge), rtol=0, atol=1e-12)
        assert np.max(np.abs(g.values(x, pts) - f1.values(x, pts))) < 2 * 0.4
        assert g0_deviation(x, f1, g.state_data(x).anchors) < 0.2
        assert g.state_tau(x) < 1.0


def test_g_is_nonconstant_on_A(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    x = flow.sample_states(1, 2)[0]
    on_A = g.values(x, params.A_points)
    assert on_A.max() - on_A.min() > 1e-9


def test_g_rejects_points_outside_cube(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    with pytest.raises(PreconditionError, match="only"):
        g.values(BASE, [[1.5, 0.5]])


def test_shift_rigidity_holds_for_generic_vectors(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    report = shift_rigidity_fuzz(g, trials=200, seed=1, pool=6)
    assert report.passed
    assert report.matches > 0


def test_shift_rigidity_separates_mirrored_states(pipeline):
    # h2 agrees at these states, so f alone cannot tell them apart
    flow, f1, params, cover, g, uset = pipeline
    states = [(0.2, 0.1), (0.8, 0.9)]
    assert float(flow.h2(states[0])) == pytest.approx(float(flow.h2(states[1])))
    report = shift_rigidity_fuzz(g, states=states, trials=50, seed=0)
    assert report.violations == 0


def test_shift_rigidity_catches_periodic_vectors(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    bad = g.with_vectors(corrupt_periodic(uset, 2, params.geometry))
    report = shift_rigidity_fuzz(bad, trials=200, seed=1, pool=6)
    assert report.violations > 0
    assert report.first_violations[0].mode in ("same-grid", "pair-grid", "pair-random", "pair-zero")


def test_cross_sections_without_g1(pipeline):
    flow, f1, params, cover, g, uset = pipeline
    data = cross_sections(g, None, BASE, samples=17)
    assert set(data) == {"f1", "g0", "g"}
    s, vals = data["g"]
    assert s.shape == vals.shape == (17,)


def test_g1_splices_g_at_the_base(pipeline, markers):
    flow, f1, params, cover, g, uset = pipeline
    q, region, g1 = markers
    cube = params.eval_grid.points()
    np.testing.assert_allclose(g1.values(BASE, cube), g.values(BASE, cube), rtol=0, atol=1e-12)
    assert region.weight(BASE) == 1.0
    assert region.weight(flow.act(np.full(2, 2.0), BASE)) == 0.0


def test_marker_perturbation_with_zero_weight_is_f1(pipeline, markers):
    flow, f1, params, cover, g, uset = pipeline
    q, region, g1 = markers
    window = GridSpec.symmetric(2, 2.0, 17)
    out = marker_perturb_g1(flow, region, lambda s: 0.0, f1, g, BASE, window)
    np.testing.assert_array_equal(out.values, f1.on_grid(BASE, window).values)


def test_marker_perturbation_splices_only_inside_the_cube(pipeline, markers):
    flow, f1, params, cover, g, uset = pipeline
    q, region, g1 = markers
    window = GridSpec.symmetric(2, 2.0, 17)
    pts = window.points()
    out = marker_perturb_g1(flow, region, None, f1, g, BASE, window)
    inside = np.all((pts >= 0.0) & (pts <= params.a), axis=1)
    assert inside.sum() == 25
    np.testing.assert_allclose(out.values[inside], g.values(BASE, pts[inside]), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(out.values[~inside], f1.values(BASE, pts[~inside]))
    np.testing.assert_allclose(out.values, g1.values(BASE, pts), rtol=0, atol=1e-15)


def test_g1_is_equivariant(pipeline, markers):
    flow, f1, params, cover, g, uset = pipeline
    q, region, g1 = markers
    window = GridSpec.symmetric(2, 2.0, 33)
    x = sample_near_base(flow, BASE, params.a / 16.0, 1, seed=3)[0]
    assert g1_equivariance_residual(g1, flow, x, [4, -3], window) <= 1e-9


def test_open_set_witnesses(pipeline, markers):
    flow, f1, params, cover, g, uset = pipeline
    q, region, g1 = markers
    window = GridSpec.symmetric(2, 2.0, 33)
    r = params.a / 16.0
    ok, spread = verify_ga(g1, sample_near_base(flow, BASE, r, 3, seed=4), window)
    assert ok and spread > 1e-9
    gap = float(flow.dist(BASE, q))
    B = sample_near_base(flow, BASE, r, 3, seed=5)
    C = sample_near_base(flow, q, r, 3, seed=6)
    ok, low = verify_gbc(g1, B, C, window, 2, 0.4, gap)
    assert ok and low > 0.0


def test_section_gap_must_exceed_delta():
    with pytest.raises(PreconditionError, match="delta too large for section pair"):
        check_section_gap(0.8, 0.7)
