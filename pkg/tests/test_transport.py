import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from md3qn.distribution import DiscreteJointDistribution
from md3qn.transport import SupportTooLargeError, assignment_wasserstein, discrete_wasserstein, sup_wasserstein


def test_two_point_example():
    p = DiscreteJointDistribution.uniform([[0.0], [1.0]])
    q = DiscreteJointDistribution([[0.0], [1.0]], [0.25, 0.75])
    assert discrete_wasserstein(p, q, 1) == pytest.approx(0.25, abs=1e-12)
    assert discrete_wasserstein(p, q, 2) == pytest.approx(0.5, abs=1e-9)


def test_point_masses_are_euclidean_distance():
    p = DiscreteJointDistribution.point([0.0, 0.0])
    q = DiscreteJointDistribution.point([3.0, 4.0])
    for p_ in (1, 2, 3):
        assert discrete_wasserstein(p, q, p_) == pytest.approx(5.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_one_dimensional_matches_quantile_formula(k1, k2, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=k1), rng.normal(size=k2)
    wa, wb = rng.dirichlet(np.ones(k1)), rng.dirichlet(np.ones(k2))
    wa, wb = wa / wa.sum(), wb / wb.sum()
    got = discrete_wasserstein(DiscreteJointDistribution(a[:, None], wa), DiscreteJointDistribution(b[:, None], wb), 1)
    assert got == pytest.approx(wasserstein_distance(a, b, wa, wb), abs=1e-8)


def test_uniform_sets_match_brute_force_permutations(rng):
    for _ in range(10):
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        for p in (1, 2):
            best = min(
                np.mean(np.linalg.norm(X - Y[list(perm)], axis=1) ** p) for perm in itertools.permutations(range(5))
            ) ** (1 / p)
            assert assignment_wasserstein(X, Y, p) == pytest.approx(best, rel=1e-9)
            lp = discrete_wasserstein(DiscreteJointDistribution.uniform(X), DiscreteJointDistribution.uniform(Y), p)
            assert lp == pytest.approx(best, rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    dists = []
    for _ in range(3):
        k = int(rng.integers(1, 6))
        w = rng.dirichlet(np.ones(k))
        dists.append(DiscreteJointDistribution(rng.normal(size=(k, 2)), w / w.sum()))
    a, b, c = dists
    assert discrete_wasserstein(a, a) == pytest.approx(0.0, abs=1e-9)
    assert discrete_wasserstein(a, b) == pytest.approx(discrete_wasserstein(b, a), abs=1e-8)
    assert discrete_wasserstein(a, c) <= discrete_wasserstein(a, b) + discrete_wasserstein(b, c) + 1e-8


def test_errors():
    p = DiscreteJointDistribution.point([0.0])
    q = DiscreteJointDistribution.point([0.0, 1.0])
    with pytest.raises(ValueError):
        discrete_wasserstein(p, q)
    with pytest.raises(ValueError):
        discrete_wasserstein(p, p, 0.5)
    big = DiscreteJointDistribution.uniform(np.arange(10.0)[:, None])
    with pytest.raises(SupportTooLargeError):
        discrete_wasserstein(big, big, 1, max_support=5)
    with pytest.raises(ValueError):
        assignment_wasserstein(np.zeros((3, 1)), np.zeros((4, 1)))


def test_sup_over_table():
    t1 = {(0, 0): DiscreteJointDistribution.point([0.0]), (1, 0): DiscreteJointDistribution.point([1.0])}
    t2 = {(0, 0): DiscreteJointDistribution.point([0.5]), (1, 0): DiscreteJointDistribution.point([3.0])}
    assert sup_wasserstein(t1, t2) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sup_wasserstein(t1, {(0, 0): t2[0, 0]})
