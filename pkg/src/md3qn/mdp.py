"""Finite MDPs with vector-valued stochastic rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Protocol, Sequence

import numpy as np

from .distribution import DiscreteJointDistribution

PROB_TOL = 1e-12

RewardSampler = Callable[[int, int, np.random.Generator], np.ndarray]


class UnsupportedModeError(ValueError):
    """Raised when an exact-mode operation is asked of a generative MDP."""


@dataclass(frozen=True, eq=False)
class Transition:
    state: Hashable
    action: int
    reward: np.ndarray
    next_state: Hashable
    terminal: bool = False


def _check_categorical(p: np.ndarray, what: str) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ValueError(f"{what} rows must be nonnegative and sum to 1")


def categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a probability vector (one uniform variate)."""
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, len(p) - 1)


@dataclass(eq=False)
class TabularMDP:
    """(S, A, P, R, rho0, gamma) with an N-dimensional reward.

    ``transition`` is (S, A, S). The reward law is either exact,
    ``reward[s][a]`` a finite :class:`DiscreteJointDistribution`, or
    generative, ``reward_sampler(s, a, rng)`` returning an N-vector.
    Entering a state flagged in ``terminal`` ends the episode.
    """

    transition: np.ndarray
    gamma: float
    n_sources: int
    reward: Sequence[Sequence[DiscreteJointDistribution]] | None = None
    reward_sampler: RewardSampler | None = None
    initial: np.ndarray | None = None
    terminal: np.ndarray | None = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        _check_categorical(self.transition, "transition")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        S, A, _ = self.transition.shape
        if (self.reward is None) == (self.reward_sampler is None):
            raise ValueError("give exactly one of reward (exact mode) or reward_sampler")
        if self.reward is not None:
            if len(self.reward) != S or any(len(row) != A for row in self.reward):
                raise ValueError("reward table must be S x A")
            for row in self.reward:
                for d in row:
                    if d.dim != self.n_sources:
                        raise ValueError("reward atoms must have n_sources entries")
        if self.initial is None:
            self.initial = np.full(S, 1.0 / S)
        self.initial = np.asarray(self.initial, dtype=float)
        _check_categorical(self.initial, "initial")
        if self.terminal is None:
            self.terminal = np.zeros(S, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def exact(self) -> bool:
        return self.reward is not None

    def check_index(self, s: int, a: int) -> None:
        if not (0 <= s < self.num_states and 0 <= a < self.num_actions):
            raise IndexError(f"(s={s}, a={a}) outside {self.num_states} x {self.num_actions}")

    def mean_reward(self) -> np.ndarray:
        """(S, A, N) expected reward; exact mode only."""
        if not self.exact:
            raise UnsupportedModeError("mean_reward needs an exact-mode MDP")
        return np.array([[d.mean() for d in row] for row in self.reward])


class Policy:
    """State -> categorical over actions.

    ``probs`` may be an (S, A) array, a mapping from state key to an
    A-vector, a callable key -> A-vector, or None for the uniform-random
    policy.
    """

    def __init__(self, n_actions: int, probs: np.ndarray | Mapping | Callable | None = None):
        self.n_actions = n_actions
        self._uniform = np.full(n_actions, 1.0 / n_actions)
        if isinstance(probs, np.ndarray) or isinstance(probs, list):
            probs = np.asarray(probs, dtype=float)
            if probs.ndim != 2 or probs.shape[1] != n_actions:
                raise ValueError("policy table must be (S, A)")
            _check_categorical(probs, "policy")
        elif isinstance(probs, Mapping):
            probs = {k: np.asarray(v, dtype=float) for k, v in probs.items()}
            for v in probs.values():
                _check_categorical(v, "policy")
        self._probs = probs

    @classmethod
    def uniform(cls, n_actions: int) -> "Policy":
        return cls(n_actions)

    def probs(self, key) -> np.ndarray:
        if self._probs is None:
            return self._uniform
        if callable(self._probs):
            return self._probs(key)
        return self._probs[key]

    def sample(self, key, rng: np.random.Generator) -> int:
        if self._probs is None:
            return int(rng.integers(self.n_actions))
        return categorical(self.probs(key), rng)


def sample_transition(mdp: TabularMDP, s: int, a: int, rng: np.random.Generator) -> Transition:
    """Draw (r, s') for (s, a): next state first, then the reward."""
    mdp.check_index(s, a)
    s_next = categorical(mdp.transition[s, a], rng)
    if mdp.exact:
        law = mdp.reward[s][a]
        r = law.atoms[categorical(law.weights, rng)].copy()
    else:
        r = np.asarray(mdp.reward_sampler(s, a, rng), dtype=float)
    return Transition(s, a, r, s_next, bool(mdp.terminal[s_next]))


def tail_horizon(gamma: float, tail_tol: float) -> int:
    """First T with gamma**T < tail_tol."""
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    T = max(1, math.ceil(math.log(tail_tol) / math.log(gamma)))
    while gamma**T >= tail_tol:
        T += 1
    while T > 1 and gamma ** (T - 1) < tail_tol:
        T -= 1
    return T


def sample_trajectory(
    mdp: TabularMDP,
    pi: Policy,
    s0: int,
    a0: int | None,
    horizon: int,
    rng: np.random.Generator,
) -> list[Transition]:
    """Roll out from s0 (forcing a0 first if given) until terminal or horizon."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    traj = []
    s = s0
    for t in range(horizon):
        a = a0 if (t == 0 and a0 is not None) else pi.sample(s, rng)
        tr = sample_transition(mdp, s, a, rng)
        traj.append(tr)
        if tr.terminal:
            break
        s = tr.next_state
    return traj


def discounted_return(traj: Sequence[Transition], gamma: float) -> np.ndarray:
    if not traj:
        raise ValueError("empty trajectory")
    n = len(traj[0].reward)
    total = np.zeros(n)
    discount = 1.0
    for tr in traj:
        if len(tr.reward) != n:
            raise ValueError("reward dimension changes within the trajectory")
        total += discount * tr.reward
        discount *= gamma
    return total


def exact_support(mdp: TabularMDP, s: int, a: int) -> list[tuple[float, np.ndarray, int]]:
    """Joint law of (r, s') given (s, a) as the product of its two factors."""
    if not mdp.exact:
        raise UnsupportedModeError("exact_support needs an exact-mode MDP")
    mdp.check_index(s, a)
    law = mdp.reward[s][a]
    out = []
    for s_next in np.flatnonzero(mdp.transition[s, a] > 0):
        p_next = mdp.transition[s, a, s_next]
        for w, r in zip(law.weights, law.atoms):
            if w > 0:
                out.append((float(w * p_next), r, int(s_next)))
    return out


class Env(Protocol):
    """What the oracle and the learner need from an environment."""

    n_actions: int
    n_sources: int
    gamma: float

    def reset(self, rng: np.random.Generator): ...

    def step(self, state, action: int, rng: np.random.Generator) -> tuple[object, np.ndarray, bool]: ...

    def key(self, state) -> Hashable: ...


@dataclass
class MDPEnv:
    """Adapter exposing a TabularMDP through the ``Env`` protocol."""

    mdp: TabularMDP
    n_actions: int = field(init=False)
    n_sources: int = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        self.n_actions = self.mdp.num_actions
        self.n_sources = self.mdp.n_sources
        self.gamma = self.mdp.gamma

    def reset(self, rng: np.random.Generator) -> int:
        return categorical(self.mdp.initial, rng)

    def step(self, state: int, action: int, rng: np.random.Generator):
        tr = sample_transition(self.mdp, state, action, rng)
        return tr.next_state, tr.reward, tr.terminal

    def key(self, state: int) -> int:
        return state


def random_mdp(
    rng: np.random.Generator,
    states: int,
    actions: int,
    sources: int,
    gamma: float,
    reward_atoms: int = 2,
) -> TabularMDP:
    """Flat-Dirichlet transitions; rewards with up to ``reward_atoms`` atoms in [0, 1]^N."""
    P = rng.dirichlet(np.ones(states), size=(states, actions))
    P /= P.sum(axis=2, keepdims=True)
    reward = []
    for _ in range(states):
        row = []
        for _ in range(actions):
            k = int(rng.integers(1, reward_atoms + 1))
            w = rng.dirichlet(np.ones(k))
            row.append(DiscreteJointDistribution(rng.uniform(0.0, 1.0, size=(k, sources)), w / w.sum()))
        reward.append(row)
    return TabularMDP(P, gamma, sources, reward=reward)


def self_loop_mdp(actions: int, sources: int, gamma: float) -> TabularMDP:
    """One state that loops forever; action a pays (a + 1) / actions in total, split evenly."""
    reward = [[DiscreteJointDistribution.point(np.full(sources, (a + 1) / (actions * sources))) for a in range(actions)]]
    return TabularMDP(np.ones((1, actions, 1)), gamma, sources, reward=reward)


def chain_mdp(length: int, reward, gamma: float) -> TabularMDP:
    """Deterministic chain ending in an absorbing state that pays ``reward`` every step."""
    reward = np.atleast_1d(np.asarray(reward, dtype=float))
    P = np.zeros((length, 1, length))
    for s in range(length):
        P[s, 0, min(s + 1, length - 1)] = 1.0
    zero = DiscreteJointDistribution.point(np.zeros_like(reward))
    table = [[zero] for _ in range(length - 1)] + [[DiscreteJointDistribution.point(reward)]]
    return TabularMDP(P, gamma, len(reward), reward=table, initial=np.eye(length)[0])
