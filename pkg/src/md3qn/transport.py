"""Exact Wasserstein-p distances between finitely supported distributions."""
from __future__ import annotations

from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog

from .distribution import DiscreteJointDistribution

DEFAULT_SUPPORT_CAP = 512


class SupportTooLargeError(ValueError):
    pass


def _cost(X: np.ndarray, Y: np.ndarray, p: float) -> np.ndarray:
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = np.sqrt(np.einsum("ijk,ijk->ij", X[:, None, :] - Y[None, :, :], X[:, None, :] - Y[None, :, :]))
    return d if p == 1 else d**p


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ValueError("p must be at least 1")


def assignment_wasserstein(Z1, Z2, p: float = 1) -> float:
    """W_p between two equal-size uniform particle sets via optimal assignment."""
    _check_p(p)
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=float))
    if Z1.shape[0] != Z2.shape[0]:
        raise ValueError("particle counts differ; use discrete_wasserstein for unequal supports")
    C = _cost(Z1, Z2, p)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].mean() ** (1.0 / p))


def _transport_lp(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> float:
    n, m = C.shape
    A = sp.vstack(
        [sp.kron(sp.eye(n), np.ones((1, m))), sp.kron(np.ones((1, n)), sp.eye(m))], format="csr"
    )
    # one marginal constraint is redundant given equal total mass
    res = linprog(
        C.ravel(),
        A_eq=A[:-1],
        b_eq=np.concatenate([a, b])[:-1],
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    flow = np.clip(res.x, 0.0, None)
    return float(flow @ C.ravel())


def discrete_wasserstein(
    p_dist: DiscreteJointDistribution,
    q_dist: DiscreteJointDistribution,
    p: float = 1,
    max_support: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """W_p with Euclidean ground cost, solved exactly as a transportation LP."""
    _check_p(p)
    P, Q = p_dist.without_zero_weights(), q_dist.without_zero_weights()
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if max(P.size, Q.size) > max_support:
        raise SupportTooLargeError(
            f"supports of size {P.size} and {Q.size} exceed the cap {max_support}; merge or compress atoms first"
        )
    C = _cost(P.atoms, Q.atoms, p)
    if P.size == 1 or Q.size == 1:
        # a point mass admits only the product coupling
        cost = float(P.weights @ C @ Q.weights)
    else:
        cost = _transport_lp(P.weights, Q.weights, C)
    return max(cost, 0.0) ** (1.0 / p)


def sup_wasserstein(
    table1: Mapping[tuple, DiscreteJointDistribution],
    table2: Mapping[tuple, DiscreteJointDistribution],
    p: float = 1,
) -> float:
    """Supremum over (s, a) of W_p between corresponding table entries."""
    if set(table1) != set(table2):
        raise ValueError("tables are indexed by different (state, action) sets")
    return max(discrete_wasserstein(table1[sa], table2[sa], p) for sa in sorted(table1))
