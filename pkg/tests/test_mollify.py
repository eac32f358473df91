import numpy as np
import pytest

from services.errors import PreconditionError
from services.lipfun import GridFunction, GridSpec, lip_const_estimate
from services.mollify import (
    DomainDescriptor,
    MollifyParams,
    distance_to_boundary,
    mollifier_weight,
    mollify_callable,
    mollify_fn,
    quadrature_rule,
    radius_field,
    second_difference_report,
)

PARAMS = MollifyParams(delta=0.05, epsilon=0.05, tau=0.9, quad_points_per_axis=9)


def _wave(p):
    return 0.5 + 0.3 * np.sin(2.0 * p[:, 0]) * np.cos(1.5 * p[:, -1])


def test_distance_to_boundary_cube_only():
    dom = DomainDescriptor(1.0, 2)
    assert distance_to_boundary([0.5, 0.5], dom) == pytest.approx(0.5)
    assert distance_to_boundary([0.0, 0.3], dom) == 0.0
    np.testing.assert_allclose(distance_to_boundary(np.array([[0.1, 0.4], [0.7, 0.8]]), dom), [0.1, 0.2])


def test_distance_to_excluded_points_and_segments():
    dom = DomainDescriptor(1.0, 2, points=[[0.5, 0.5]], segments=(([0.2, 0.8], [0.8, 0.8]),))
    assert distance_to_boundary([0.5, 0.5], dom) == 0.0
    assert distance_to_boundary([0.5, 0.6], dom) == pytest.approx(0.1)
    assert distance_to_boundary([0.5, 0.75], dom) == pytest.approx(0.05)


def test_excluded_set_must_lie_in_cube():
    with pytest.raises(PreconditionError, match="inside"):
        DomainDescriptor(1.0, 1, points=[[1.5]])


def test_radius_field_caps_and_vanishes_on_boundary():
    dom = DomainDescriptor(1.0, 1)
    cap = PARAMS.delta / (2.0 * PARAMS.tau)
    assert radius_field([0.0], PARAMS, dom) == 0.0
    assert radius_field([0.5], PARAMS, dom) == pytest.approx(cap)
    assert radius_field([0.01], PARAMS, dom) == pytest.approx(PARAMS.epsilon / (2.0 * PARAMS.tau) * 0.01)


def test_quadrature_weights_are_normalized_and_symmetric():
    nodes, weights, c = quadrature_rule(2, 9)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(np.linalg.norm(nodes, axis=1) < 1.0)
    np.testing.assert_allclose(nodes.T @ weights, [0.0, 0.0], atol=1e-15)
    assert c > 0.0


def test_mollifier_weight_vanishes_outside_ball():
    assert mollifier_weight([1.0]) == 0.0
    assert mollifier_weight([0.0]) > mollifier_weight([0.5]) > 0.0


def test_params_validation():
    with pytest.raises(PreconditionError):
        MollifyParams(delta=0.1, epsilon=0.1, tau=1.0)
    with pytest.raises(PreconditionError):
        MollifyParams(delta=0.0, epsilon=0.1, tau=0.5)


def test_boundary_values_survive_and_sup_deviation_small():
    grid = GridSpec.cube(2, 1.0, 33)
    dom = DomainDescriptor(1.0, 2)
    phi = GridFunction.sample(grid, _wave, tau=0.9)
    Phi = mollify_fn(phi, dom, PARAMS)
    pts = grid.points()
    edge = np.any((pts <= 0.0) | (pts >= 1.0), axis=1)
    np.testing.assert_array_equal(Phi.values[edge], phi.values[edge])
    assert np.max(np.abs(Phi.values - phi.values)) < PARAMS.delta
    assert Phi.tau == pytest.approx(PARAMS.tau + PARAMS.epsilon)


def test_mollified_lipschitz_within_budget():
    grid = GridSpec.cube(2, 1.0, 33)
    dom = DomainDescriptor(1.0, 2)
    phi = GridFunction.sample(grid, _wave, tau=0.9)
    Phi = mollify_fn(phi, dom, PARAMS)
    assert lip_const_estimate(Phi) <= Phi.tau + Phi.slack + 1e-9


def test_constants_reproduced():
    grid = GridSpec.cube(1, 1.0, 65)
    phi = GridFunction(grid, np.full(grid.count, 0.42), tau=0.5)
    Phi = mollify_fn(phi, DomainDescriptor(1.0, 1), MollifyParams(delta=0.1, epsilon=0.1, tau=0.5))
    np.testing.assert_allclose(Phi.values, 0.42, atol=1e-12)


def test_mollify_callable_keeps_excluded_points():
    dom = DomainDescriptor(1.0, 1, points=[[0.5]])
    pts = np.array([[0.25], [0.5], [0.75]])
    out = mollify_callable(lambda q: np.abs(q[:, 0] - 0.5), pts, dom, MollifyParams(delta=0.2, epsilon=0.2, tau=0.9))
    assert out[1] == 0.0
    assert out[0] == pytest.approx(0.25, abs=0.02)


def test_input_must_cover_cube():
    grid = GridSpec.cube(1, 0.5, 11)
    phi = GridFunction(grid, np.zeros(11), tau=0.5)
    with pytest.raises(PreconditionError, match="cover"):
        mollify_fn(phi, DomainDescriptor(1.0, 1), PARAMS)


def test_second_difference_report_on_smooth_input():
    grid = GridSpec.cube(2, 1.0, 33)
    dom = DomainDescriptor(1.0, 2)
    Phi = mollify_fn(GridFunction.sample(grid, _wave, tau=0.9), dom, PARAMS)
    report = second_difference_report(Phi, dom, PARAMS)
    assert report.points_checked > 0
    assert report.passed
