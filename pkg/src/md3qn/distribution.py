"""Finitely supported distributions over R^N."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteJointDistribution:
    """Weighted atoms in R^N.

    ``atoms`` is a (K, N) array and ``weights`` a (K,) array summing to one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.ndim != 2:
            raise ValueError("atoms must be a (K, N) array")
        if weights.shape != (atoms.shape[0],):
            raise ValueError(f"got {weights.shape[0]} weights for {atoms.shape[0]} atoms")
        if atoms.shape[0] == 0:
            raise ValueError("distribution needs at least one atom")
        if np.any(weights < 0) or not np.all(np.isfinite(atoms)):
            raise ValueError("weights must be nonnegative and atoms finite")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL * max(1, atoms.shape[0]):
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point(cls, x) -> "DiscreteJointDistribution":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.ones(1))

    @classmethod
    def uniform(cls, atoms) -> "DiscreteJointDistribution":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return cls(atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def without_zero_weights(self) -> "DiscreteJointDistribution":
        keep = self.weights > 0
        if keep.all():
            return self
        w = self.weights[keep]
        return DiscreteJointDistribution(self.atoms[keep], w / w.sum())

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        idx = np.searchsorted(np.cumsum(self.weights), rng.random(count), side="right")
        return self.atoms[np.minimum(idx, self.size - 1)]


def merge_atoms(dist: DiscreteJointDistribution, tol: float = 1e-12) -> DiscreteJointDistribution:
    """Coalesce atoms lying within L-infinity distance ``tol`` of each other.

    Clusters are the connected components of the ``tol``-neighbourhood graph;
    each is replaced by its weight-averaged location, so the mean is kept.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    dist = dist.without_zero_weights()
    if dist.size == 1:
        return dist
    pairs = cKDTree(dist.atoms).query_pairs(r=tol, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return dist
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(dist.size,) * 2)
    n_comp, labels = connected_components(graph, directed=False)
    # order clusters by first occurrence so the output is stable
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(n_comp, dtype=int)
    relabel[order] = np.arange(n_comp)
    labels = relabel[labels]
    weights = np.bincount(labels, weights=dist.weights, minlength=n_comp)
    atoms = np.zeros((n_comp, dist.dim))
    np.add.at(atoms, labels, dist.atoms * dist.weights[:, None])
    atoms /= weights[:, None]
    # singleton clusters keep their exact coordinates
    counts = np.bincount(labels, minlength=n_comp)
    single = counts == 1
    if single.any():
        src = np.flatnonzero(single[labels])
        atoms[labels[src]] = dist.atoms[src]
    return DiscreteJointDistribution(atoms, weights / weights.sum())


def compress_atoms(dist: DiscreteJointDistribution, max_atoms: int) -> DiscreteJointDistribution:
    """Mean-preserving reduction to at most ``max_atoms`` atoms.

    Atoms are ordered by coordinate sum (ties lexicographically) and cut into
    contiguous groups of near-equal count; each group collapses to its
    weighted mean. Unlike top-K truncation this keeps the first moment, so
    expected-return quantities are exact under repeated compression.
    """
    if max_atoms < 1:
        raise ValueError("max_atoms must be positive")
    if dist.size <= max_atoms:
        return dist
    keys = [dist.atoms[:, n] for n in range(dist.dim - 1, -1, -1)]
    order = np.lexsort(keys + [dist.atoms.sum(axis=1)])
    groups = np.array_split(order, max_atoms)
    atoms = np.empty((max_atoms, dist.dim))
    weights = np.empty(max_atoms)
    for g, idx in enumerate(groups):
        w = dist.weights[idx]
        weights[g] = w.sum()
        atoms[g] = (w @ dist.atoms[idx]) / weights[g] if weights[g] > 0 else dist.atoms[idx].mean(axis=0)
    keep = weights > 0
    return DiscreteJointDistribution(atoms[keep], weights[keep] / weights[keep].sum())


def mixture(parts: list[tuple[float, DiscreteJointDistribution]]) -> DiscreteJointDistribution:
    """Mixture of distributions with the given nonnegative mixing weights."""
    parts = [(w, d) for w, d in parts if w > 0]
    atoms = np.concatenate([d.atoms for _, d in parts])
    weights = np.concatenate([w * d.weights for w, d in parts])
    return DiscreteJointDistribution(atoms, weights / weights.sum())
