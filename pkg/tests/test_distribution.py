import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from md3qn.distribution import DiscreteJointDistribution, compress_atoms, merge_atoms, mixture


def random_dist(rng, k=5, n=2):
    w = rng.dirichlet(np.ones(k))
    return DiscreteJointDistribution(rng.normal(size=(k, n)), w / w.sum())


def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        DiscreteJointDistribution([[0.0], [1.0]], [0.7, 0.7])
    with pytest.raises(ValueError):
        DiscreteJointDistribution([[0.0], [1.0]], [1.5, -0.5])
    with pytest.raises(ValueError):
        DiscreteJointDistribution([[np.nan]], [1.0])
    with pytest.raises(ValueError):
        DiscreteJointDistribution([[0.0], [1.0]], [1.0])


def test_arrays_are_frozen():
    d = DiscreteJointDistribution.uniform([[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        d.atoms[0, 0] = 5.0


def test_merge_duplicates_to_single_atom():
    d = DiscreteJointDistribution([[1.0, 2.0], [1.0, 2.0]], [0.5, 0.5])
    m = merge_atoms(d)
    assert m.size == 1
    assert m.weights[0] == pytest.approx(1.0)
    np.testing.assert_array_equal(m.atoms[0], [1.0, 2.0])


def test_merge_zero_tol_keeps_distinct_atoms(rng):
    d = random_dist(rng, 6)
    m = merge_atoms(d, 0.0)
    np.testing.assert_array_equal(m.atoms, d.atoms)
    np.testing.assert_array_equal(m.weights, d.weights)


def test_merge_uses_weighted_location():
    d = DiscreteJointDistribution([[0.0], [0.1], [5.0]], [0.25, 0.5, 0.25])
    m = merge_atoms(d, 0.2)
    assert m.size == 2
    assert m.atoms[0, 0] == pytest.approx((0.25 * 0.0 + 0.5 * 0.1) / 0.75)
    assert m.weights[0] == pytest.approx(0.75)


def test_merge_conserves_mass_on_random_distributions(rng):
    for _ in range(100):
        d = random_dist(rng, int(rng.integers(1, 20)), int(rng.integers(1, 4)))
        d = DiscreteJointDistribution(np.round(d.atoms, 1), d.weights)
        m = merge_atoms(d, 1e-12)
        assert abs(m.weights.sum() - 1.0) <= 1e-15 * 4
        np.testing.assert_allclose(m.mean(), d.mean(), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 10), st.integers(0, 2**31))
def test_compress_keeps_mean_and_bounds_size(k, cap, seed):
    d = random_dist(np.random.default_rng(seed), k, 2)
    c = compress_atoms(d, cap)
    assert c.size <= cap
    np.testing.assert_allclose(c.mean(), d.mean(), atol=1e-12)


def test_mixture_weights():
    a = DiscreteJointDistribution.point([0.0])
    b = DiscreteJointDistribution.point([1.0])
    m = mixture([(0.25, a), (0.75, b)])
    np.testing.assert_allclose(m.weights, [0.25, 0.75])
    assert m.mean()[0] == pytest.approx(0.75)


def test_sample_frequencies(rng):
    d = DiscreteJointDistribution([[0.0], [1.0]], [0.3, 0.7])
    x = d.sample(20000, rng)
    assert abs(x.mean() - 0.7) < 4 * np.sqrt(0.21 / 20000)
