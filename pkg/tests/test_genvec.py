import numpy as np
import pytest

from services.errors import GenericityError, PreconditionError
from services.genvec import (
    VectorGeometry,
    corrupt_periodic,
    diff_vector,
    rank_full_check,
    recertify,
    sample_generic_vectors,
    window_restrict,
)
from services.topo_embed import choose_main_lemma_params

GEOMETRY = VectorGeometry.from_indices(20, 5, 11)


def _targets(M=2, N=20, seed=0):
    return np.random.default_rng(seed).uniform(0.3, 0.7, size=(M, N))


def test_helpers():
    np.testing.assert_allclose(diff_vector([1.0, 3.0, 6.0]), [2.0, 3.0])
    np.testing.assert_allclose(window_restrict([1, 2, 3, 4, 5], 2, 3), [2, 3, 4])
    with pytest.raises(PreconditionError, match="out of range"):
        window_restrict([1, 2, 3], 2, 3)


def test_rank_full_check():
    assert rank_full_check([[1.0, 0.0], [0.0, 1.0]]).ok
    dep = rank_full_check([[1.0, 2.0], [2.0, 4.0]])
    assert not dep.ok and dep.reason == "rank deficient"
    assert rank_full_check([[1.0], [2.0]]).reason == "dimension deficit"


def test_geometry_shifts_stay_in_range():
    assert GEOMETRY.lam_start == 6 and GEOMETRY.lam_stop == 11
    assert GEOMETRY.lam_size == 6
    assert 0 not in GEOMETRY.shifts
    assert min(GEOMETRY.shifts) == -5 and max(GEOMETRY.shifts) == 9


def test_sampled_vectors_certify_and_stay_in_box():
    targets = _targets()
    uset = sample_generic_vectors(targets, GEOMETRY, eta=0.05, seed=11)
    assert uset.M == 2 and uset.N == 20
    assert np.all(np.abs(uset.vectors - targets) < 0.05)
    assert min(uset.certificates.values()) > 1e-9
    ok, certs = recertify(uset, GEOMETRY)
    assert ok
    assert certs == pytest.approx(uset.certificates)


def test_sampling_is_seeded():
    a = sample_generic_vectors(_targets(), GEOMETRY, eta=0.05, seed=5)
    b = sample_generic_vectors(_targets(), GEOMETRY, eta=0.05, seed=5)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_periodic_corruption_breaks_shift_condition():
    uset = sample_generic_vectors(_targets(), GEOMETRY, eta=0.05, seed=3)
    bad = corrupt_periodic(uset, 2, GEOMETRY)
    np.testing.assert_array_equal(bad.vectors[:, 2:], bad.vectors[:, :-2])
    assert bad.certificates["cond4"] <= 1e-9
    assert not recertify(bad, GEOMETRY)[0]


def test_too_many_vectors_for_lambda():
    with pytest.raises(PreconditionError, match="Q-L >= 2M"):
        sample_generic_vectors(_targets(M=4), GEOMETRY, eta=0.05, seed=0)


def test_exhausted_retries_name_the_condition():
    # vectors within 1e-12 of a constant are numerically parallel to e
    flat = np.full((1, 20), 0.5)
    with pytest.raises(GenericityError) as err:
        sample_generic_vectors(flat, GEOMETRY, eta=1e-12, seed=0, max_retries=2)
    assert err.value.condition == "cond2"


def test_first_draw_certifies_for_almost_every_seed():
    params = choose_main_lemma_params(1.0, 0.4, 0.5, 2)
    s = np.linspace(0.0, 1.0, params.N)
    targets = np.vstack([0.5 + 0.1 * np.sin(2 * np.pi * s), 0.45 + 0.05 * s])
    first = 0
    for seed in range(100):
        uset = sample_generic_vectors(targets, params.geometry, params.eta, seed)
        first += uset.attempts == 1
        assert min(uset.certificates.values()) > 1e-9
    assert first >= 95


def test_smallest_admissible_geometry():
    geometry = VectorGeometry.from_indices(4, 1, 3)
    assert geometry.lam_size == 2 and geometry.shifts == (-1, 1)
    uset = sample_generic_vectors(np.full((1, 4), 0.5), geometry, eta=0.3, seed=42)
    assert uset.attempts <= 4
    assert min(uset.certificates.values()) > 1e-9
    assert np.all(np.abs(uset.vectors - 0.5) < 0.3)
