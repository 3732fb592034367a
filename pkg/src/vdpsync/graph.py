"""Directed coupling graphs and gain-weighted block Laplacians.

Edge convention: the pair ``(i, j)`` means information flows from node ``j``
into node ``i`` (``j`` is an in-neighbor of ``i``). Nodes are 0-based.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError

FloatArray = NDArray[np.float64]
Edge = tuple[int, int]


@dataclass(frozen=True)
class CouplingGraph:
    """Strongly connected directed graph without self-loops."""

    n: int
    edges: tuple[Edge, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __init__(self, n: int, edges: Iterable[Iterable[int]]):
        n = int(n)
        if n < 2:
            raise DomainError(f"graph needs n >= 2 nodes, got {n}")
        es = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if not (0 <= i < n and 0 <= j < n):
                raise DomainError(f"edge {(i, j)} out of range for n={n}")
            if i == j:
                raise DomainError(f"self-loop at node {i}")
            es.add((i, j))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(sorted(es)))
        object.__setattr__(self, "_index", {e: k for k, e in enumerate(self.edges)})
        if not is_strongly_connected(self):
            raise DomainError(f"graph with edges {self.edges} is not strongly connected")

    @property
    def m(self) -> int:
        """Number of directed edges."""
        return len(self.edges)

    def edge_index(self, edge: Edge) -> int:
        try:
            return self._index[(int(edge[0]), int(edge[1]))]
        except KeyError:
            raise DomainError(f"edge {tuple(edge)} is not in the graph") from None

    def neighbors(self, i: int) -> list[int]:
        """In-neighbors ``N_i`` of node ``i``."""
        return [j for (a, j) in self.edges if a == i]

    def laplacian(self) -> FloatArray:
        return laplacian(self)

    def laplacian_kron(self) -> FloatArray:
        return np.kron(laplacian(self), np.eye(2))

    def digest(self) -> str:
        """Short stable hash of ``(n, edges)``, used in file headers and cache keys."""
        text = f"{self.n}:" + ";".join(f"{i},{j}" for i, j in self.edges)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _reachable(n: int, adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def is_strongly_connected(g) -> bool:
    """True iff every node reaches every other node along directed edges.

    Accepts a :class:`CouplingGraph` or any object with ``n`` and ``edges``.
    """
    n = int(g.n)
    fwd: list[list[int]] = [[] for _ in range(n)]
    bwd: list[list[int]] = [[] for _ in range(n)]
    for i, j in g.edges:
        fwd[j].append(i)  # information flows j -> i
        bwd[i].append(j)
    return len(_reachable(n, fwd, 0)) == n and len(_reachable(n, bwd, 0)) == n


def laplacian(g: CouplingGraph) -> FloatArray:
    L = np.zeros((g.n, g.n))
    for i, j in g.edges:
        L[i, j] -= 1.0
        L[i, i] += 1.0
    return L


def chain_graph(n: int) -> CouplingGraph:
    """Path ``0 - 1 - ... - n-1`` with both directions on every link."""
    if n < 2:
        raise DomainError(f"chain graph needs n >= 2, got {n}")
    edges = [(i, i + 1) for i in range(n - 1)] + [(i + 1, i) for i in range(n - 1)]
    return CouplingGraph(n, edges)


def complete_graph(n: int) -> CouplingGraph:
    if n < 2:
        raise DomainError(f"complete graph needs n >= 2, got {n}")
    return CouplingGraph(n, [(i, j) for i in range(n) for j in range(n) if i != j])


@dataclass(frozen=True)
class EdgeGainSet:
    """Diagonal gains ``(k_ij1, k_ij2)`` for every edge, ordered like ``graph.edges``."""

    graph: CouplingGraph
    values: FloatArray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.graph.m, 2):
            raise DomainError(f"gain array must have shape ({self.graph.m}, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite gain")
        if np.any(v < 0):
            raise DomainError("gains must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, graph: CouplingGraph, k: float) -> "EdgeGainSet":
        return cls(graph, np.full((graph.m, 2), float(k)))

    @classmethod
    def from_mapping(cls, graph: CouplingGraph, gains: Mapping[Edge, Iterable[float]]) -> "EdgeGainSet":
        v = np.zeros((graph.m, 2))
        seen = set()
        for edge, pair in gains.items():
            k = graph.edge_index(edge)
            seen.add(k)
            arr = np.asarray(pair, dtype=np.float64)
            if arr.shape == (2, 2):
                if arr[0, 1] != 0 or arr[1, 0] != 0:
                    raise DomainError(f"gain for edge {edge} must be diagonal")
                arr = np.diag(arr)
            elif arr.shape != (2,):
                raise DomainError(f"gain for edge {edge} must be a 2-vector or 2x2 diagonal")
            v[k] = arr
        if len(seen) != graph.m:
            missing = [graph.edges[k] for k in range(graph.m) if k not in seen]
            raise DomainError(f"missing gains for edges {missing}")
        return cls(graph, v)

    def as_dict(self) -> dict[Edge, FloatArray]:
        return {e: np.diag(self.values[k]) for k, e in enumerate(self.graph.edges)}

    @property
    def max_entry(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0


def as_gain_array(g: CouplingGraph, gains) -> FloatArray:
    """Normalize ``EdgeGainSet`` / mapping / ``(m, 2)`` array to an ``(m, 2)`` array."""
    if isinstance(gains, EdgeGainSet):
        if gains.graph != g:
            raise DomainError("gain set belongs to a different graph")
        return gains.values
    if isinstance(gains, Mapping):
        return EdgeGainSet.from_mapping(g, gains).values
    return EdgeGainSet(g, gains).values


def edge_basis(g: CouplingGraph) -> FloatArray:
    """Matrices ``E[k]`` with ``L_K = sum_k gain_k * E[k]``.

    Gain ``k = 2*e + d`` is diagonal entry ``d`` of edge ``e``.
    Shape ``(2m, 2n, 2n)``.
    """
    E = np.zeros((2 * g.m, 2 * g.n, 2 * g.n))
    for e, (i, j) in enumerate(g.edges):
        for d in range(2):
            k = 2 * e + d
            E[k, 2 * i + d, 2 * i + d] = 1.0
            E[k, 2 * i + d, 2 * j + d] = -1.0
    return E


def build_LK(g: CouplingGraph, gains) -> FloatArray:
    """Block Laplacian with ``M_ii = sum_j K_ij`` and ``M_ij = -K_ij``."""
    v = as_gain_array(g, gains)
    M = np.zeros((2 * g.n, 2 * g.n))
    for e, (i, j) in enumerate(g.edges):
        for d in range(2):
            M[2 * i + d, 2 * i + d] += v[e, d]
            M[2 * i + d, 2 * j + d] -= v[e, d]
    return M
