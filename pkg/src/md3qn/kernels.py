"""Mixed-bandwidth Gaussian kernels and MMD^2 estimators.

k(x, y) = sum_i exp(-||x - y||^2 / w_i) over squared bandwidths w_i.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _fast
from .distribution import WEIGHT_TOL, DiscreteJointDistribution


@dataclass(frozen=True)
class KernelSpec:
    squared_bandwidths: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        w = tuple(float(x) for x in self.squared_bandwidths)
        if not w or any(not x > 0 for x in w):
            raise ValueError("squared bandwidths must be a nonempty list of positive reals")
        object.__setattr__(self, "squared_bandwidths", w)

    @property
    def size(self) -> int:
        return len(self.squared_bandwidths)

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / np.asarray(self.squared_bandwidths)


PRESETS = {
    "W1": KernelSpec(tuple(2.0**k for k in range(-8, 9)), "W1"),
    "W2": KernelSpec(
        (0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.48, 0.64, 0.80, 0.96, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0), "W2"
    ),
    "W3": KernelSpec(tuple(float(k) for k in range(1, 11)), "W3"),
    "maze": KernelSpec((0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.48, 0.64, 0.80, 0.96), "maze"),
}


def preset(name: str) -> KernelSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown kernel preset {name!r}; known: {', '.join(PRESETS)}") from None


def _as_particles(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be an (M, N) array")
    return X


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kernel_eval(k: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d2 = float(np.dot(x - y, x - y))
    return float(sum(np.exp(-d2 / w) for w in k.squared_bandwidths))


def kernel_matrix(k: KernelSpec, X, Y) -> np.ndarray:
    d2 = _sqdist(_as_particles(X, "X"), _as_particles(Y, "Y"))
    out = np.zeros_like(d2)
    for w in k.squared_bandwidths:
        out += np.exp(-d2 / w)
    return out


def _check_pair(Z: np.ndarray, Y: np.ndarray) -> int:
    if Z.shape != Y.shape:
        raise ValueError(f"Z and Y must have equal shapes, got {Z.shape} and {Y.shape}")
    M = Z.shape[0]
    if M < 2:
        raise ValueError("need at least two particles for the off-diagonal statistic")
    return M


def mmd2_train_stat(k: KernelSpec, Z, Y) -> float:
    """Off-diagonal double sum of k(Zi,Zj) - 2 k(Zi,Yj) + k(Yi,Yj), unnormalized.

    The diagonal i == j is dropped from all three terms, cross term included.
    Divide by M(M-1) for an unbiased MMD^2 estimate.
    """
    Z, Y = _as_particles(Z, "Z"), _as_particles(Y, "Y")
    _check_pair(Z, Y)

    def offdiag(K):
        return K.sum() - np.trace(K)

    return float(
        offdiag(kernel_matrix(k, Z, Z)) - 2.0 * offdiag(kernel_matrix(k, Z, Y)) + offdiag(kernel_matrix(k, Y, Y))
    )


def mmd2_eval_stat(k: KernelSpec, Z, Y) -> float:
    """Biased V-statistic; sample sizes may differ. Large inputs are chunked."""
    Z, Y = _as_particles(Z, "Z"), _as_particles(Y, "Y")
    if Z.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {Z.shape[1]} vs {Y.shape[1]}")
    kzz = kernel_mean(k, Z, Z)
    kzy = kernel_mean(k, Z, Y)
    kyy = kernel_mean(k, Y, Y)
    return max(0.0, kzz - 2.0 * kzy + kyy)


def kernel_mean(k: KernelSpec, X, Y) -> float:
    """Mean of k over all pairs (X_i, Y_j)."""
    X, Y = _as_particles(X, "X"), _as_particles(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    inv, plan = _fast.prepare(k.squared_bandwidths)
    return _fast.kernel_sum(X, Y, inv, plan) / (X.shape[0] * Y.shape[0])


def mmd2_exact(k: KernelSpec, p: DiscreteJointDistribution, q: DiscreteJointDistribution) -> float:
    for d in (p, q):
        if abs(d.weights.sum() - 1.0) > WEIGHT_TOL * max(1, d.size):
            raise ValueError("weights are not normalized")
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    a, b = p.weights, q.weights
    return float(
        a @ kernel_matrix(k, p.atoms, p.atoms) @ a
        - 2.0 * a @ kernel_matrix(k, p.atoms, q.atoms) @ b
        + b @ kernel_matrix(k, q.atoms, q.atoms) @ b
    )


def _coef_matrix(k: KernelSpec, d2: np.ndarray) -> np.ndarray:
    # sum_w (2/w) exp(-d2/w): the scalar factor of the kernel gradient
    c = np.zeros_like(d2)
    for w in k.squared_bandwidths:
        c += (2.0 / w) * np.exp(-d2 / w)
    return c


def mmd2_grad(k: KernelSpec, Z, Y) -> np.ndarray:
    """Gradient of :func:`mmd2_train_stat` with respect to Z; Y is held fixed.

    dk/dx = -(2/w)(x - y) exp(-||x-y||^2/w) per bandwidth, so
    d/dZ_i = sum_{j != i} [2 dk(Z_i, Z_j) - 2 dk(Z_i, Y_j)].
    """
    Z, Y = _as_particles(Z, "Z"), _as_particles(Y, "Y")
    _check_pair(Z, Y)
    czz = _coef_matrix(k, _sqdist(Z, Z))
    np.fill_diagonal(czz, 0.0)
    czy = _coef_matrix(k, _sqdist(Z, Y))
    np.fill_diagonal(czy, 0.0)
    g = -2.0 * (czz.sum(axis=1)[:, None] * Z - czz @ Z)
    g += 2.0 * (czy.sum(axis=1)[:, None] * Z - czy @ Y)
    return g


def mmd2_train_stat_batch(k: KernelSpec, Z, Y) -> np.ndarray:
    """:func:`mmd2_train_stat` over a leading batch axis: (R, M, N) -> (R,)."""
    Z, Y = np.asarray(Z, dtype=float), np.asarray(Y, dtype=float)
    if Z.shape != Y.shape or Z.ndim != 3:
        raise ValueError("Z and Y must both be (R, M, N) with equal shapes")
    if Z.shape[1] < 2:
        raise ValueError("need at least two particles for the off-diagonal statistic")

    def offdiag(A, B):
        d = A[:, :, None, :] - B[:, None, :, :]
        d2 = np.einsum("rijk,rijk->rij", d, d)
        K = sum(np.exp(-d2 / w) for w in k.squared_bandwidths)
        return K.sum(axis=(1, 2)) - np.trace(K, axis1=1, axis2=2)

    return offdiag(Z, Z) - 2.0 * offdiag(Z, Y) + offdiag(Y, Y)
