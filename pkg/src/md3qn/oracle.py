"""Monte-Carlo samples of the joint discounted return."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mdp import Env, MDPEnv, Policy, TabularMDP, tail_horizon


def rollout_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for rollout ``index`` of a run seeded with ``seed``.

    Each rollout owns the stream ``default_rng([seed, index])``, so the
    sample set does not depend on how rollouts are scheduled.
    """
    return np.random.default_rng([seed, index])


def rollout_return(env: Env, policy: Policy, state, action: int | None, horizon: int, rng) -> np.ndarray:
    total = np.zeros(env.n_sources)
    discount = 1.0
    for t in range(horizon):
        a = action if (t == 0 and action is not None) else policy.sample(env.key(state), rng)
        state, r, terminal = env.step(state, a, rng)
        total += discount * r
        discount *= env.gamma
        if terminal:
            break
    return total


def oracle_samples(
    env: Env | TabularMDP,
    policy: Policy,
    count: int,
    *,
    start=None,
    action: int | None = None,
    tail_tol: float = 1e-6,
    seed: int = 0,
) -> np.ndarray:
    """``count`` i.i.d. draws of Z^pi(start, action), shape (count, N).

    Rollouts stop at termination or at the first T with gamma**T < tail_tol.
    ``start`` defaults to the environment's reset state (drawn per rollout
    for MDPs with a random initial distribution).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if isinstance(env, TabularMDP):
        env = MDPEnv(env)
    horizon = tail_horizon(env.gamma, tail_tol)
    out = np.empty((count, env.n_sources))
    for i in range(count):
        rng = rollout_rng(seed, i)
        s0 = env.reset(rng) if start is None else start
        out[i] = rollout_return(env, policy, s0, action, horizon, rng)
    return out


def write_samples_csv(path: str | Path, samples: np.ndarray, prefix: str = "source") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}_{n}" for n in range(samples.shape[1])])
        for row in samples:
            w.writerow([format(float(v), ".17g") for v in row])


def read_samples_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]])
