"""Small-world graphs and matching Gaussian precision matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import RngStream, sym_eigen
from .designs import DesignError, GaussianModel

MIN_EIGENVALUE = 0.05


@dataclass(eq=False)
class GraphTruth:
    adjacency: np.ndarray
    precision: np.ndarray

    @property
    def p(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def model(self) -> GaussianModel:
        return GaussianModel.from_precision(self.precision)


def watts_strogatz(p: int, k_neighbors: int, rewire_prob: float, gen: np.random.Generator) -> np.ndarray:
    """Ring lattice joining each node to its ``k_neighbors`` nearest neighbours, then
    each lattice edge ``(i, i + j)`` has its far end rewired with probability
    ``rewire_prob`` to a uniformly chosen node that is not ``i`` or already adjacent."""
    if k_neighbors < 2 or k_neighbors % 2:
        raise DesignError("k_neighbors must be even and >= 2")
    if k_neighbors >= p:
        raise DesignError("k_neighbors must be smaller than p")
    if not 0 <= rewire_prob <= 1:
        raise DesignError("rewire_prob must lie in [0, 1]")
    adj = np.zeros((p, p), dtype=np.int64)
    for i in range(p):
        for j in range(1, k_neighbors // 2 + 1):
            adj[i, (i + j) % p] = adj[(i + j) % p, i] = 1
    for j in range(1, k_neighbors // 2 + 1):
        for i in range(p):
            target = (i + j) % p
            if gen.random() >= rewire_prob or not adj[i, target]:
                continue
            choices = [v for v in range(p) if v != i and not adj[i, v]]
            if not choices:
                continue
            new = choices[int(gen.integers(len(choices)))]
            adj[i, target] = adj[target, i] = 0
            adj[i, new] = adj[new, i] = 1
    return adj


def make_small_world(p: int, k_neighbors: int = 4, rewire_prob: float = 0.1, coupling: float = 0.2,
                     rng: RngStream | None = None) -> GraphTruth:
    """Watts-Strogatz graph with precision ``I + coupling * A``, diagonally loaded
    until its smallest eigenvalue is at least 0.05."""
    gen = (rng or RngStream(0)).generator()
    adj = watts_strogatz(p, k_neighbors, rewire_prob, gen)
    precision = np.eye(p) + coupling * adj
    while True:
        lo = sym_eigen(precision)[0][-1]
        if lo >= MIN_EIGENVALUE:
            break
        precision += (MIN_EIGENVALUE - lo + 1e-12) * np.eye(p)
    return GraphTruth(adj, precision)


def chain_truth(p: int = 3, partial_corr: float = 0.45) -> GraphTruth:
    """Path graph ``0 - 1 - ... - (p-1)`` with strong negative-precision couplings."""
    adj = np.zeros((p, p), dtype=np.int64)
    for i in range(p - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    precision = np.eye(p) - partial_corr * adj
    if sym_eigen(precision)[0][-1] < MIN_EIGENVALUE:
        raise DesignError("partial_corr too large for a positive definite chain")
    return GraphTruth(adj, precision)
