import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from md3qn.distribution import DiscreteJointDistribution as D
from md3qn.mdp import (
    MDPEnv,
    Policy,
    TabularMDP,
    Transition,
    categorical,
    chain_mdp,
    discounted_return,
    exact_support,
    random_mdp,
    sample_trajectory,
    sample_transition,
    self_loop_mdp,
    tail_horizon,
)


def test_validation():
    rew = [[D.point([0.0])]]
    with pytest.raises(ValueError):
        TabularMDP(np.ones((1, 1, 2)), 0.5, 1, reward=rew)
    with pytest.raises(ValueError):
        TabularMDP(np.full((1, 1, 1), 0.5), 0.5, 1, reward=rew)
    for g in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            TabularMDP(np.ones((1, 1, 1)), g, 1, reward=rew)
    with pytest.raises(ValueError):
        TabularMDP(np.ones((1, 1, 1)), 0.5, 1)
    with pytest.raises(ValueError):
        TabularMDP(np.ones((1, 1, 1)), 0.5, 2, reward=rew)


def test_check_index():
    mdp = self_loop_mdp(2, 1, 0.5)
    with pytest.raises(IndexError):
        mdp.check_index(1, 0)
    with pytest.raises(IndexError):
        mdp.check_index(0, 2)


def test_categorical_frequencies(rng):
    p = np.array([0.1, 0.6, 0.3])
    counts = np.bincount([categorical(p, rng) for _ in range(20000)], minlength=3)
    se = np.sqrt(p * (1 - p) / 20000)
    assert np.all(np.abs(counts / 20000 - p) < 4 * se)


def test_sample_transition_frequencies(rng):
    mdp = random_mdp(rng, 3, 2, 2, 0.9)
    n = 20000
    nxt = np.bincount([sample_transition(mdp, 0, 1, rng).next_state for _ in range(n)], minlength=3)
    p = mdp.transition[0, 1]
    assert np.all(np.abs(nxt / n - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-12)


def test_sample_transition_reward_comes_from_support(rng):
    mdp = random_mdp(rng, 2, 2, 2, 0.9)
    for _ in range(50):
        tr = sample_transition(mdp, 1, 0, rng)
        assert any(np.array_equal(tr.reward, a) for a in mdp.reward[1][0].atoms)


@settings(max_examples=100)
@given(st.floats(0.01, 0.999), st.floats(1e-9, 0.5))
def test_tail_horizon_is_first_crossing(gamma, tol):
    T = tail_horizon(gamma, tol)
    assert gamma**T < tol
    assert T == 1 or gamma ** (T - 1) >= tol


def test_tail_horizon_default_length():
    assert tail_horizon(0.99, 1e-6) == math.ceil(math.log(1e-6) / math.log(0.99))


def test_discounted_return():
    traj = [Transition(0, 0, np.array([1.0, 0.0]), 0), Transition(0, 0, np.array([0.0, 2.0]), 0)]
    np.testing.assert_allclose(discounted_return(traj, 0.5), [1.0, 1.0])
    bad = traj + [Transition(0, 0, np.array([1.0]), 0)]
    with pytest.raises(ValueError):
        discounted_return(bad, 0.5)
    with pytest.raises(ValueError):
        discounted_return([], 0.5)


def test_trajectory_stops_at_terminal(rng):
    mdp = chain_mdp(3, [1.0], 0.5)
    mdp.terminal[2] = True
    traj = sample_trajectory(mdp, Policy.uniform(1), 0, None, 100, rng)
    assert len(traj) == 2 and traj[-1].terminal
    with pytest.raises(ValueError):
        sample_trajectory(mdp, Policy.uniform(1), 0, None, 0, rng)


def test_forced_first_action(rng):
    mdp = self_loop_mdp(3, 1, 0.5)
    traj = sample_trajectory(mdp, Policy(3, np.array([[1.0, 0.0, 0.0]])), 0, 2, 5, rng)
    assert [t.action for t in traj] == [2, 0, 0, 0, 0]


def test_policy_forms(rng):
    assert Policy.uniform(4).probs("anything").tolist() == [0.25] * 4
    table = Policy(2, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert table.sample(1, rng) == 1
    mapping = Policy(2, {"a": [0.0, 1.0]})
    assert mapping.sample("a", rng) == 1
    fn = Policy(2, lambda key: np.array([1.0, 0.0]))
    assert fn.sample("x", rng) == 0
    with pytest.raises(ValueError):
        Policy(2, np.array([[0.5, 0.6]]))


def test_exact_support_is_a_distribution(rng):
    mdp = random_mdp(rng, 4, 2, 3, 0.9)
    for s in range(4):
        for a in range(2):
            assert sum(p for p, _, _ in exact_support(mdp, s, a)) == pytest.approx(1.0)


def test_builders():
    mdp = self_loop_mdp(3, 2, 0.9)
    np.testing.assert_allclose(mdp.mean_reward().sum(axis=2)[0], [1 / 3, 2 / 3, 1.0])
    chain = chain_mdp(4, [1.0, 2.0], 0.5)
    assert chain.num_states == 4 and chain.n_sources == 2
    assert chain.transition[3, 0, 3] == 1.0


def test_mdp_env_adapter(rng):
    env = MDPEnv(chain_mdp(3, [1.0], 0.5))
    assert env.reset(rng) == 0
    s, r, term = env.step(0, 0, rng)
    assert s == 1 and r.tolist() == [0.0] and not term


def test_random_mdp_is_reproducible_and_normalised():
    a = random_mdp(np.random.default_rng(42), 3, 2, 2, 0.9)
    b = random_mdp(np.random.default_rng(42), 3, 2, 2, 0.9)
    np.testing.assert_array_equal(a.transition, b.transition)
    assert np.all(np.abs(a.transition.sum(axis=2) - 1) < 1e-12)
    for s in range(3):
        for x, y in zip(a.reward[s], b.reward[s]):
            np.testing.assert_array_equal(x.atoms, y.atoms)
    one = random_mdp(np.random.default_rng(0), 1, 1, 1, 0.5, reward_atoms=1)
    assert one.transition[0, 0, 0] == 1.0 and one.reward[0][0].size == 1


def test_reward_support_mean(rng):
    mdp = TabularMDP(np.ones((1, 1, 1)), 0.5, 2, reward=[[D([[0.0, 1.0], [2.0, 0.0]], [0.5, 0.5])]])
    draws = np.array([sample_transition(mdp, 0, 0, rng).reward for _ in range(100_000)])
    assert abs(draws[:, 0].mean() - 1.0) < 0.02
