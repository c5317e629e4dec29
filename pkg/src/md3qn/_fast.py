"""Compiled pair loops for the training hot path.

Gaussians are evaluated wide to narrow. When a squared bandwidth w is an
integer fraction w'/k of a wider one already evaluated, exp(-d/w) is taken
as exp(-d/w')**k by repeated multiplication instead of a fresh ``exp``. The
W1 doubling plan needs a single ``exp`` per pair, W2 needs four and W3
five. Relative error grows by about k ulp per step, below 1e-11 overall.

Each particle's distances to the other cloud are computed as one vector so
the per-bandwidth loops run across pairs and vectorize.
"""
from __future__ import annotations

import numba
import numpy as np

MAX_POWER = 16


def prepare(squared_bandwidths) -> tuple[np.ndarray, np.ndarray]:
    """Inverse bandwidths sorted wide-to-narrow and an evaluation plan.

    plan[i] = (parent, k): bandwidth i is bandwidth parent's Gaussian to the
    power k, or a direct ``exp`` when parent is -1.
    """
    w = np.sort(np.asarray(squared_bandwidths, dtype=float))[::-1]
    plan = np.full((len(w), 2), -1, dtype=np.int64)
    for i in range(len(w)):
        best = None
        for j in range(i):
            k = w[j] / w[i]
            r = round(k)
            if 2 <= r <= MAX_POWER and abs(k - r) <= 1e-12 * r and (best is None or r < best[1]):
                best = (j, r)
        if best is not None:
            plan[i] = best
    return np.ascontiguousarray(1.0 / w), plan


def exp_count(plan: np.ndarray) -> int:
    return int(np.sum(plan[:, 0] < 0))


@numba.njit(cache=True, fastmath=True, inline="always")
def _is_ladder(plan):
    for i in range(1, plan.shape[0]):
        if plan[i, 0] != i - 1 or plan[i, 1] != 2:
            return False
    return True


@numba.njit(cache=True, fastmath=True, inline="always")
def _weighted(d2, n, inv, plan, wt, u, out):
    # out[j] = sum_i wt[i] exp(-d2[j] * inv[i]) for j < n; u[i] caches each Gaussian
    if _is_ladder(plan):
        # one rolling row, squared down the ladder
        f = wt[0]
        for j in range(n):
            v = np.exp(-d2[j] * inv[0])
            u[0, j] = v
            out[j] = f * v
        for i in range(1, inv.shape[0]):
            f = wt[i]
            for j in range(n):
                v = u[0, j] * u[0, j]
                u[0, j] = v
                out[j] += f * v
        return
    for j in range(n):
        out[j] = 0.0
    for i in range(inv.shape[0]):
        p = plan[i, 0]
        f = wt[i]
        if p < 0:
            a = inv[i]
            for j in range(n):
                v = np.exp(-d2[j] * a)
                u[i, j] = v
                out[j] += v * f
            continue
        k = plan[i, 1]
        if k == 2:
            for j in range(n):
                v = u[p, j] * u[p, j]
                u[i, j] = v
                out[j] += v * f
            continue
        for j in range(n):
            u[i, j] = u[p, j]
        for _ in range(k - 1):
            for j in range(n):
                u[i, j] *= u[p, j]
        for j in range(n):
            out[j] += u[i, j] * f


@numba.njit(cache=True, fastmath=True, inline="always")
def _coef(d2, n, inv, plan, u, c):
    # c[j] = sum_w (2/w) exp(-d2[j]/w) for j < n
    _weighted(d2, n, inv, plan, 2.0 * inv, u, c)


@numba.njit(cache=True, fastmath=True, inline="always")
def _kern(d2, n, inv, plan, u, k):
    # k[j] = sum_w exp(-d2[j]/w) for j < n
    _weighted(d2, n, inv, plan, np.ones_like(inv), u, k)


@numba.njit(cache=True, fastmath=True)
def kernel_sum(X, Y, inv, plan):
    """sum_{i,j} k(X_i, Y_j)."""
    K, N = Y.shape
    d2 = np.empty(K)
    u = np.empty((inv.shape[0], K))
    k = np.empty(K)
    total = 0.0
    for i in range(X.shape[0]):
        for j in range(K):
            s = 0.0
            for n in range(N):
                t = X[i, n] - Y[j, n]
                s += t * t
            d2[j] = s
        _kern(d2, K, inv, plan, u, k)
        row = 0.0
        for j in range(K):
            row += k[j]
        total += row
    return total


@numba.njit(cache=True, fastmath=True)
def self_grad(Z, inv, plan):
    """d/dZ of sum_{i != j} k(Z_i, Z_j)."""
    M, N = Z.shape
    g = np.zeros((M, N))
    d2 = np.empty(M)
    u = np.empty((inv.shape[0], M))
    c = np.empty(M)
    for i in range(M - 1):
        m = M - i - 1
        for j in range(m):
            s = 0.0
            for n in range(N):
                t = Z[i, n] - Z[i + 1 + j, n]
                s += t * t
            d2[j] = s
        _coef(d2, m, inv, plan, u, c)
        for n in range(N):
            acc = 0.0
            zi = Z[i, n]
            for j in range(m):
                t = c[j] * (zi - Z[i + 1 + j, n])
                acc += t
                g[i + 1 + j, n] += 2.0 * t
            g[i, n] -= 2.0 * acc
    return g


@numba.njit(cache=True, fastmath=True)
def cross_grad(Z, Y, inv, plan):
    """d/dZ of -2 sum_{i != j} k(Z_i, Y_j)."""
    M, N = Z.shape
    K = Y.shape[0]
    g = np.zeros((M, N))
    d2 = np.empty(K)
    u = np.empty((inv.shape[0], K))
    c = np.empty(K)
    for i in range(M):
        for j in range(K):
            s = 0.0
            for n in range(N):
                t = Z[i, n] - Y[j, n]
                s += t * t
            d2[j] = s
        _coef(d2, K, inv, plan, u, c)
        if i < K:
            c[i] = 0.0
        for n in range(N):
            acc = 0.0
            for j in range(K):
                acc += c[j] * (Z[i, n] - Y[j, n])
            g[i, n] = 2.0 * acc
    return g
