import math

import numpy as np
import pytest

from services.errors import ExtensionError, PreconditionError
from services.extension import (
    AnchorSet,
    as_points,
    mcshane_extend,
    mcshane_lower,
    pairwise_lipschitz,
    random_lipschitz_anchors,
)
from services.lipfun import GridFunction, GridSpec, lip_const_estimate


def _naive_mcshane(points, values, tau, q):
    best = -math.inf
    for p, v in zip(points, values):
        d = math.sqrt(sum((qi - pi) ** 2 for qi, pi in zip(q, p)))
        best = max(best, v - tau * d)
    return best


def test_matches_looped_oracle():
    anchors = random_lipschitz_anchors(2, 25, 0.8, seed=3)
    queries = np.random.default_rng(4).uniform(-0.2, 1.2, size=(200, 2))
    got = mcshane_extend(anchors, queries)
    want = [_naive_mcshane(anchors.points, anchors.values, anchors.tau, q) for q in queries]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


def test_reproduces_anchor_values_exactly():
    anchors = random_lipschitz_anchors(1, 10, 0.5, seed=1)
    np.testing.assert_array_equal(mcshane_extend(anchors, anchors.points), anchors.values)


def test_extension_keeps_budget_on_grid():
    for seed in range(5):
        anchors = random_lipschitz_anchors(2, 15, 0.7, seed=seed)
        grid = GridSpec.cube(2, 1.0, 21)
        ext = GridFunction(grid, mcshane_extend(anchors, grid.points()), tau=0.7)
        assert lip_const_estimate(ext) <= 0.7 + 1e-9


def test_upper_extension_below_lower_envelope():
    anchors = random_lipschitz_anchors(2, 12, 0.6, seed=9)
    q = GridSpec.cube(2, 1.0, 17).points()
    assert np.all(mcshane_extend(anchors, q) <= mcshane_lower(anchors, q) + 1e-12)


def test_inconsistent_anchors_rejected():
    anchors = AnchorSet([[0.0], [0.1]], [0.0, 0.5], tau=1.0)
    with pytest.raises(ExtensionError, match="not τ-extendable"):
        mcshane_extend(anchors, [[0.05]])


def test_duplicate_anchor_points_rejected():
    anchors = AnchorSet([[0.2, 0.2], [0.2, 0.2]], [0.1, 0.1], tau=0.5)
    with pytest.raises(ExtensionError, match="duplicate"):
        anchors.validate()


def test_empty_anchor_set_rejected():
    with pytest.raises(ExtensionError, match="empty"):
        AnchorSet(np.zeros((0, 2)), [], tau=0.5)


def test_pairwise_lipschitz():
    assert pairwise_lipschitz([[0.0], [2.0], [3.0]], [0.0, 1.0, 1.0]) == pytest.approx(0.5)


def test_as_points_shapes():
    assert as_points(0.3, 1).shape == (1, 1)
    assert as_points([0.1, 0.2, 0.3], 1).shape == (3, 1)
    assert as_points([0.1, 0.2], 2).shape == (1, 2)
    with pytest.raises(PreconditionError):
        as_points(np.zeros((4, 3)), 2)
