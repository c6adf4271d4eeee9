"""Graphs, Metropolis combination matrices and neighbourhood splits.

Agents are indexed from 0 inside the library. Text exports use 1-based
indices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConstructionError, InvalidConfigError, IsolatedAgentError

GRAPH_MODELS = ("erdos_renyi", "ring", "star", "complete")
MAX_RETRIES = 1000
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class Adjacency:
    """Undirected graph stored as neighbour sets that contain the agent itself."""

    num_agents: int
    neighbor_sets: tuple[frozenset[int], ...]
    retries: int = 0

    def __post_init__(self):
        if self.num_agents < 1 or len(self.neighbor_sets) != self.num_agents:
            raise InvalidConfigError("neighbor_sets must hold one set per agent")

    @classmethod
    def from_edges(cls, num_agents: int, edges, retries: int = 0) -> "Adjacency":
        sets = [{k} for k in range(num_agents)]
        for a, b in edges:
            if not (0 <= a < num_agents and 0 <= b < num_agents):
                raise InvalidConfigError(f"edge ({a}, {b}) out of range")
            sets[a].add(b)
            sets[b].add(a)
        return cls(num_agents, tuple(frozenset(s) for s in sets), retries)

    def neighbors(self, k: int, include_self: bool = True) -> list[int]:
        """Sorted neighbours of ``k``."""
        ns = sorted(self.neighbor_sets[k])
        return ns if include_self else [m for m in ns if m != k]

    def degree(self, k: int) -> int:
        """Number of neighbours excluding ``k`` itself."""
        return len(self.neighbor_sets[k]) - 1

    def is_adjacent(self, a: int, b: int) -> bool:
        return b in self.neighbor_sets[a]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected non-self edges as ``(a, b)`` with ``a < b``."""
        return [(a, b) for a in range(self.num_agents)
                for b in sorted(self.neighbor_sets[a]) if a < b]

    def matrix(self) -> np.ndarray:
        """Boolean adjacency matrix including the diagonal."""
        out = np.zeros((self.num_agents, self.num_agents), dtype=bool)
        for k, ns in enumerate(self.neighbor_sets):
            out[k, list(ns)] = True
        return out

    def is_connected(self) -> bool:
        return _bfs_reach(self.neighbor_sets, 0) == self.num_agents

    def validate(self) -> None:
        """Raise :class:`InvalidConfigError` unless the invariants hold."""
        for k, ns in enumerate(self.neighbor_sets):
            if k not in ns:
                raise InvalidConfigError(f"agent {k} missing from its own neighbourhood")
            for m in ns:
                if not 0 <= m < self.num_agents:
                    raise InvalidConfigError(f"agent {k} lists unknown neighbour {m}")
                if k not in self.neighbor_sets[m]:
                    raise InvalidConfigError(f"edge {k}-{m} is not symmetric")
        if not self.is_connected():
            raise InvalidConfigError("graph is not connected")

    def to_edge_list(self) -> str:
        """One ``src dst`` pair per line, 1-indexed, each undirected edge once."""
        return "".join(f"{a + 1} {b + 1}\n" for a, b in self.edges())

    def write_edge_list(self, path) -> None:
        Path(path).write_text(self.to_edge_list())


def _bfs_reach(neighbor_sets, start):
    seen = {start}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for m in neighbor_sets[k]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return len(seen)


def build_graph(num_agents: int, model: str = "erdos_renyi", seed: int = 0,
                p: float = 0.2) -> Adjacency:
    """Build a connected undirected graph.

    Erdos-Renyi graphs are redrawn with sub-seeds ``(seed, 1)``, ``(seed, 2)``,
    ... until connected; the number of redraws is kept in ``Adjacency.retries``.
    """
    if num_agents < 2:
        raise InvalidConfigError(f"need at least 2 agents, got {num_agents}")
    K = num_agents
    if model == "ring":
        return Adjacency.from_edges(K, [(k, (k + 1) % K) for k in range(K)])
    if model == "star":
        return Adjacency.from_edges(K, [(0, k) for k in range(1, K)])
    if model == "complete":
        return Adjacency.from_edges(K, [(a, b) for a in range(K) for b in range(a + 1, K)])
    if model != "erdos_renyi":
        raise InvalidConfigError(f"unknown graph model {model!r}; choose from {GRAPH_MODELS}")
    if not 0 < p <= 1:
        raise InvalidConfigError(f"edge probability must lie in (0, 1], got {p}")

    iu = np.triu_indices(K, k=1)
    for retry in range(MAX_RETRIES + 1):
        rng = np.random.default_rng([seed, retry])
        keep = rng.random(len(iu[0])) < p
        adj = Adjacency.from_edges(K, zip(iu[0][keep].tolist(), iu[1][keep].tolist()), retry)
        if adj.is_connected():
            return adj
    raise ConstructionError(
        f"no connected Erdos-Renyi graph with K={K}, p={p} after {MAX_RETRIES} retries")


def metropolis_weights(adj: Adjacency) -> np.ndarray:
    """Symmetric doubly-stochastic combination matrix from local degrees.

    ``a[l, k] = 1 / max(|N_l|, |N_k|)`` for adjacent ``l != k`` (neighbourhood
    sizes count the agent itself) and the diagonal absorbs the remainder.
    """
    K = adj.num_agents
    sizes = [len(ns) for ns in adj.neighbor_sets]
    A = np.zeros((K, K))
    for a, b in adj.edges():
        A[a, b] = A[b, a] = 1.0 / max(sizes[a], sizes[b])
    # diagonal from the off-diagonal column sum so both sums hit 1 exactly up to rounding
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, 1.0 - A.sum(axis=0))
    return A


def check_combination_matrix(A: np.ndarray, adj: Adjacency | None = None,
                             tol: float = STOCHASTIC_TOL) -> None:
    """Raise :class:`InvalidConfigError` if ``A`` is not a valid combination matrix."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidConfigError("combination matrix must be square")
    if np.any(A < 0):
        raise InvalidConfigError("combination matrix has negative entries")
    if not np.array_equal(A, A.T):
        raise InvalidConfigError("combination matrix is not symmetric")
    ones = np.ones(A.shape[0])
    if np.max(np.abs(A @ ones - 1)) > tol or np.max(np.abs(A.T @ ones - 1)) > tol:
        raise InvalidConfigError("combination matrix is not doubly stochastic")
    if adj is not None and not np.array_equal(A > 0, adj.matrix()):
        raise InvalidConfigError("support of A differs from the adjacency")


def weights_text(A: np.ndarray) -> str:
    """``k m a_mk`` lines (1-indexed) for every nonzero entry."""
    rows, cols = np.nonzero(A)
    return "".join(f"{k + 1} {m + 1} {float(A[m, k])!r}\n" for m, k in
                   sorted(zip(rows.tolist(), cols.tolist()), key=lambda t: (t[1], t[0])))


@dataclass(frozen=True)
class NeighborhoodSplit:
    """Partition of an agent's neighbours (itself excluded) into two sides."""

    agent: int
    positive: tuple[int, ...]
    negative: tuple[int, ...]

    @property
    def members(self) -> tuple[int, ...]:
        return self.positive + self.negative

    def pairs(self) -> list[tuple[int, int]]:
        return [(l, m) for l in self.positive for m in self.negative]


def split_neighborhood(k: int, adj: Adjacency, seed=None) -> NeighborhoodSplit:
    """Randomly permute the neighbours of ``k`` and deal them alternately.

    Even positions of the permutation go to the positive side. ``seed`` is
    anything :func:`numpy.random.default_rng` accepts, including a live
    ``Generator`` whose state is advanced.
    """
    neighbours = adj.neighbors(k, include_self=False)
    if not neighbours:
        raise IsolatedAgentError(f"agent {k} has no neighbours")
    rng = np.random.default_rng(seed)
    order = [neighbours[j] for j in rng.permutation(len(neighbours))]
    return NeighborhoodSplit(k, tuple(order[0::2]), tuple(order[1::2]))


@dataclass(frozen=True)
class Topology:
    """An adjacency together with its combination matrix."""

    adjacency: Adjacency
    weights: np.ndarray

    @classmethod
    def build(cls, num_agents: int, model: str = "erdos_renyi", seed: int = 0,
              p: float = 0.2) -> "Topology":
        adj = build_graph(num_agents, model, seed, p)
        return cls(adj, metropolis_weights(adj))

    @classmethod
    def from_adjacency(cls, adj: Adjacency) -> "Topology":
        return cls(adj, metropolis_weights(adj))

    @property
    def num_agents(self) -> int:
        return self.adjacency.num_agents
