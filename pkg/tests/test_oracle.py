import numpy as np
import pytest

from md3qn.bellman import evaluation_operator, point_table
from md3qn.mdp import Policy, chain_mdp, random_mdp, self_loop_mdp
from md3qn.oracle import oracle_samples, read_samples_csv, write_samples_csv


def test_chain_return_is_deterministic():
    mdp = chain_mdp(4, [1.0, 2.0], 0.5)
    z = oracle_samples(mdp, Policy.uniform(1), 10, action=0, tail_tol=1e-12)
    # three steps to reach the absorbing state, which then pays forever
    expected = 0.5**3 / (1 - 0.5) * np.array([1.0, 2.0])
    np.testing.assert_allclose(z, np.tile(expected, (10, 1)), atol=1e-10)


def test_tail_truncation_error_is_bounded():
    mdp = self_loop_mdp(1, 1, 0.9)
    z = oracle_samples(mdp, Policy.uniform(1), 1, action=0, tail_tol=1e-6)
    assert 0 <= 10.0 - z[0, 0] <= 1e-6 / (1 - 0.9) + 1e-12


def test_mean_matches_exact_fixed_point():
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 3, 2, 2, 0.6)
    mdp.initial = np.array([1.0, 0.0, 0.0])
    pi = Policy.uniform(2)
    table = point_table(mdp, np.zeros(2))
    for _ in range(40):
        table = evaluation_operator(table, mdp, pi, max_atoms=64)
    exact = table[(0, 1)].mean()
    z = oracle_samples(mdp, pi, 4000, start=0, action=1, tail_tol=1e-8, seed=3)
    se = z.std(axis=0) / np.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0) - exact) < 5 * se + 1e-6)


def test_samples_are_reproducible_and_prefix_stable():
    mdp = random_mdp(np.random.default_rng(1), 3, 2, 2, 0.8)
    a = oracle_samples(mdp, Policy.uniform(2), 50, seed=9)
    b = oracle_samples(mdp, Policy.uniform(2), 80, seed=9)
    np.testing.assert_array_equal(a, b[:50])
    assert not np.array_equal(a, oracle_samples(mdp, Policy.uniform(2), 50, seed=10))


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        oracle_samples(self_loop_mdp(1, 1, 0.5), Policy.uniform(1), 0)


def test_csv_roundtrip_is_exact(tmp_path):
    z = np.random.default_rng(0).normal(size=(20, 3))
    write_samples_csv(tmp_path / "z.csv", z)
    np.testing.assert_array_equal(read_samples_csv(tmp_path / "z.csv"), z)
