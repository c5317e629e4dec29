"""Exact joint distributional Bellman operators on finite distribution tables.

A table maps every (state, action) of an exact-mode :class:`TabularMDP` to a
:class:`DiscreteJointDistribution`. Operators return new tables; atoms are
merged at ``merge_tol`` after each application and, optionally, compressed
to ``max_atoms`` by the mean-preserving rule in :func:`compress_atoms`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .distribution import DiscreteJointDistribution, compress_atoms, merge_atoms, mixture
from .mdp import Policy, TabularMDP, UnsupportedModeError, exact_support
from .transport import sup_wasserstein

DistributionTable = Dict[Tuple[int, int], DiscreteJointDistribution]

__all__ = [
    "DistributionTable",
    "ContractionReport",
    "bellman_optimality_scalar",
    "evaluation_operator",
    "expect_sum",
    "expect_sum_table",
    "merge_atoms",
    "optimality_operator",
    "point_table",
    "pushforward",
    "random_policy",
    "random_table",
    "scalar_value_iteration",
    "verify_contraction",
]


def pushforward(dist: DiscreteJointDistribution, r, gamma: float) -> DiscreteJointDistribution:
    """Law of r + gamma * X for X ~ dist."""
    r = np.asarray(r, dtype=float)
    if r.shape != (dist.dim,):
        raise ValueError(f"reward of shape {r.shape} does not match atoms of dimension {dist.dim}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    return DiscreteJointDistribution(r + gamma * dist.atoms, dist.weights)


def expect_sum(dist: DiscreteJointDistribution) -> float:
    """E[sum_n Z_n]."""
    return float(dist.weights @ dist.atoms.sum(axis=1))


def expect_sum_table(table: DistributionTable, mdp: TabularMDP) -> np.ndarray:
    Q = np.empty((mdp.num_states, mdp.num_actions))
    for (s, a), d in table.items():
        Q[s, a] = expect_sum(d)
    return Q


def _require_exact(mdp: TabularMDP) -> None:
    if not mdp.exact:
        raise UnsupportedModeError("exact Bellman operators need an exact-mode MDP")


def _check_table(table: DistributionTable, mdp: TabularMDP) -> None:
    want = {(s, a) for s in range(mdp.num_states) for a in range(mdp.num_actions)}
    if set(table) != want:
        raise ValueError("table does not cover the MDP's (state, action) grid")


def _apply(table, mdp, next_action_probs, gamma, merge_tol, max_atoms) -> DistributionTable:
    out = {}
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            parts = []
            for prob, r, s_next in exact_support(mdp, s, a):
                if mdp.terminal[s_next]:
                    parts.append((prob, DiscreteJointDistribution.point(r)))
                    continue
                for a_next, w in enumerate(next_action_probs(s_next)):
                    if w > 0:
                        parts.append((prob * w, pushforward(table[s_next, a_next], r, gamma)))
            d = merge_atoms(mixture(parts), merge_tol)
            if max_atoms is not None:
                d = compress_atoms(d, max_atoms)
            out[s, a] = d
    return out


def evaluation_operator(
    table: DistributionTable,
    mdp: TabularMDP,
    pi: Policy,
    *,
    gamma: float | None = None,
    merge_tol: float = 1e-12,
    max_atoms: int | None = None,
) -> DistributionTable:
    """Mixture over (r, s', a') of r + gamma * table[s', a'] with a' ~ pi(.|s').

    Terminal next states contribute a point mass at r. ``gamma`` overrides
    the MDP's discount (tests use 0).
    """
    _require_exact(mdp)
    _check_table(table, mdp)
    g = mdp.gamma if gamma is None else gamma
    return _apply(table, mdp, pi.probs, g, merge_tol, max_atoms)


def greedy_actions(table: DistributionTable, mdp: TabularMDP) -> np.ndarray:
    """Per state, the action maximizing E[sum_n Z_n]; lowest index on ties."""
    return np.argmax(expect_sum_table(table, mdp), axis=1)


def optimality_operator(
    table: DistributionTable,
    mdp: TabularMDP,
    *,
    gamma: float | None = None,
    merge_tol: float = 1e-12,
    max_atoms: int | None = None,
) -> DistributionTable:
    """As :func:`evaluation_operator` with a' the greedy action at s'."""
    _require_exact(mdp)
    _check_table(table, mdp)
    g = mdp.gamma if gamma is None else gamma
    best = greedy_actions(table, mdp)
    onehot = np.eye(mdp.num_actions)[best]
    return _apply(table, mdp, lambda s: onehot[s], g, merge_tol, max_atoms)


def bellman_optimality_scalar(Q: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    """T_E Q(s,a) = E[sum r] + gamma * E_{s'}[max_a' Q(s', a')], zero past terminals."""
    r_sum = mdp.mean_reward().sum(axis=2)
    v = np.where(mdp.terminal, 0.0, Q.max(axis=1))
    return r_sum + mdp.gamma * mdp.transition @ v


def scalar_value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Q* as an (S, A) array with ||T_E Q - Q||_inf <= tol."""
    _require_exact(mdp)
    Q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iter):
        Qn = bellman_optimality_scalar(Q, mdp)
        if np.max(np.abs(Qn - Q)) <= tol:
            return Qn
        Q = Qn
    raise RuntimeError("value iteration did not converge")


def point_table(mdp: TabularMDP, x) -> DistributionTable:
    d = DiscreteJointDistribution.point(np.broadcast_to(np.asarray(x, dtype=float), (mdp.n_sources,)))
    return {(s, a): d for s in range(mdp.num_states) for a in range(mdp.num_actions)}


def random_table(
    mdp: TabularMDP, rng: np.random.Generator, max_atoms: int = 8, scale: float = 2.0
) -> DistributionTable:
    """Entries with 1..max_atoms atoms uniform in [-scale, scale]^N and Dirichlet weights."""
    table = {}
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            k = int(rng.integers(1, max_atoms + 1))
            atoms = rng.uniform(-scale, scale, size=(k, mdp.n_sources))
            w = rng.dirichlet(np.ones(k))
            table[s, a] = DiscreteJointDistribution(atoms, w / w.sum())
    return table


def random_policy(mdp: TabularMDP, rng: np.random.Generator) -> Policy:
    p = rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states)
    return Policy(mdp.num_actions, p / p.sum(axis=1, keepdims=True))


@dataclass
class ContractionReport:
    slack: float = 1e-9
    commutation_tol: float = 1e-10
    rows: list = field(default_factory=list)

    def add(self, trial, p, gamma, lhs, rhs, lhs_e, rhs_e, commutation):
        self.rows.append(
            dict(trial=trial, p=p, gamma=gamma, lhs=lhs, rhs=rhs, ratio=_ratio(lhs, rhs),
                 lhs_expect=lhs_e, rhs_expect=rhs_e, commutation=commutation)
        )

    @property
    def max_ratio(self) -> float:
        return max((r["ratio"] for r in self.rows), default=0.0)

    @property
    def max_ratio_over_gamma(self) -> float:
        return max((r["ratio"] / r["gamma"] for r in self.rows), default=0.0)

    @property
    def max_commutation_residual(self) -> float:
        return max((r["commutation"] for r in self.rows), default=0.0)

    def violations(self) -> list[str]:
        out = []
        for r in self.rows:
            g = r["gamma"]
            if r["lhs"] > g * r["rhs"] + self.slack:
                out.append(f"trial {r['trial']} p={r['p']}: distributional contraction {r['lhs']:.6g} > {g}*{r['rhs']:.6g}")
            if r["lhs_expect"] > g * r["rhs_expect"] + self.slack:
                out.append(f"trial {r['trial']} p={r['p']}: expectation contraction violated")
            if r["commutation"] > self.commutation_tol:
                out.append(f"trial {r['trial']} p={r['p']}: commutation residual {r['commutation']:.3g}")
        return out

    @property
    def passed(self) -> bool:
        return not self.violations()

    def write_csv(self, path) -> None:
        cols = ["trial", "p", "gamma", "lhs", "rhs", "ratio", "lhs_expect", "rhs_expect", "commutation"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r[c] if c in ("trial", "p") else format(float(r[c]), ".17g") for c in cols])


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else float("inf")


def verify_contraction(
    mdp: TabularMDP,
    trials: int,
    p: float,
    rng: np.random.Generator,
    *,
    max_atoms: int = 8,
    report: ContractionReport | None = None,
    trial_offset: int = 0,
) -> ContractionReport:
    """Check both contraction inequalities and E_sum(T mu) = T_E(E_sum mu) on random tables.

    Each trial draws two tables and a random policy for the evaluation
    operator. Rows accumulate into ``report`` when one is given.
    """
    _require_exact(mdp)
    report = ContractionReport() if report is None else report
    for t in range(trials):
        mu1 = random_table(mdp, rng, max_atoms)
        mu2 = random_table(mdp, rng, max_atoms)
        pi = random_policy(mdp, rng)
        lhs = sup_wasserstein(evaluation_operator(mu1, mdp, pi), evaluation_operator(mu2, mdp, pi), p)
        rhs = sup_wasserstein(mu1, mu2, p)
        t1, t2 = optimality_operator(mu1, mdp), optimality_operator(mu2, mdp)
        e1, e2 = expect_sum_table(mu1, mdp), expect_sum_table(mu2, mdp)
        te1, te2 = expect_sum_table(t1, mdp), expect_sum_table(t2, mdp)
        commutation = max(
            np.max(np.abs(te1 - bellman_optimality_scalar(e1, mdp))),
            np.max(np.abs(te2 - bellman_optimality_scalar(e2, mdp))),
        )
        report.add(
            trial_offset + t, p, mdp.gamma, lhs, rhs,
            float(np.max(np.abs(te1 - te2))), float(np.max(np.abs(e1 - e2))), float(commutation),
        )
    return report
