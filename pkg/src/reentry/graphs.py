"""Finite weighted graphs, weighted Laplacians and spectral gaps.

Edges are ordered pairs ``(s, t)``.  For a weight map ``w`` the Laplacian acts as

    (L x)_s = sum_t w(s, t) (x_s - x_t)

so row ``s`` collects the weights of edges leaving ``s``.  An edge that is not
listed has weight zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedGraph:
    node_count: int
    edges: tuple[tuple[int, int], ...]
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("node_count must be positive")
        edges = tuple((int(s), int(t)) for s, t in self.edges)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != len(edges):
            raise GraphError(f"{len(edges)} edges but {weights.shape[0]} weights")
        for s, t in edges:
            if not (0 <= s < self.node_count and 0 <= t < self.node_count):
                raise GraphError(f"edge ({s}, {t}) has an endpoint outside 0..{self.node_count - 1}")
            if s == t:
                raise GraphError(f"self loop at node {s}")
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edges")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise GraphError("weights must be finite and nonnegative")
        weights.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    @property
    def sources(self) -> np.ndarray:
        return np.array([s for s, _ in self.edges], dtype=int)

    @property
    def targets(self) -> np.ndarray:
        return np.array([t for _, t in self.edges], dtype=int)

    def with_weights(self, weights) -> "WeightedGraph":
        return WeightedGraph(self.node_count, self.edges, weights)

    def weight_matrix(self) -> np.ndarray:
        W = np.zeros((self.node_count, self.node_count))
        if self.edges:
            W[self.sources, self.targets] = self.weights
        return W

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        W = self.weight_matrix()
        return bool(np.max(np.abs(W - W.T), initial=0.0) <= tol)

    def is_connected(self, tol: float = 0.0) -> bool:
        """Connectivity of the undirected support of the edges with weight > tol."""
        W = self.weight_matrix()
        adj = (W > tol) | (W.T > tol)
        seen = {0}
        frontier = [0]
        while frontier:
            s = frontier.pop()
            for t in np.flatnonzero(adj[s]):
                if t not in seen:
                    seen.add(int(t))
                    frontier.append(int(t))
        return len(seen) == self.node_count

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edges": [list(e) for e in self.edges],
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WeightedGraph":
        unknown = set(data) - {"node_count", "edges", "weights"}
        if unknown:
            raise GraphError(f"unknown graph keys: {sorted(unknown)}")
        return cls(int(data["node_count"]), tuple(tuple(e) for e in data["edges"]), data["weights"])


def complete_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    edges = tuple((s, t) for s in range(n) for t in range(n) if s != t)
    return WeightedGraph(n, edges, np.full(len(edges), float(weight)))


def path_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    edges = []
    for s in range(n - 1):
        edges += [(s, s + 1), (s + 1, s)]
    return WeightedGraph(n, tuple(edges), np.full(len(edges), float(weight)))


def cycle_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    edges = []
    for s in range(n):
        t = (s + 1) % n
        edges += [(s, t), (t, s)]
    return WeightedGraph(n, tuple(edges), np.full(len(edges), float(weight)))


def laplacian_from_weights(node_count: int, sources, targets, weights) -> np.ndarray:
    W = np.zeros((node_count, node_count))
    W[sources, targets] = weights
    return np.diag(W.sum(axis=1)) - W


def laplacian_matrix(graph: WeightedGraph) -> np.ndarray:
    W = graph.weight_matrix()
    return np.diag(W.sum(axis=1)) - W


def laplacian_apply(graph: WeightedGraph, field) -> np.ndarray:
    """Apply the weighted Laplacian node-wise to a field with one row per node."""
    field = np.asarray(field, dtype=float)
    squeeze = field.ndim == 1
    if squeeze:
        field = field[:, None]
    if field.shape[0] != graph.node_count:
        raise GraphError(f"field has {field.shape[0]} rows, graph has {graph.node_count} nodes")
    out = np.zeros_like(field)
    if graph.edges:
        s, t = graph.sources, graph.targets
        np.add.at(out, s, graph.weights[:, None] * (field[s] - field[t]))
    return out[:, 0] if squeeze else out


def symmetrize_conductance(graph: WeightedGraph) -> WeightedGraph:
    """Symmetric conductance 0.5 (w_st + w_ts); reverse edges are added when missing."""
    W = graph.weight_matrix()
    Wbar = 0.5 * (W + W.T)
    pairs = set(graph.edges) | {(t, s) for s, t in graph.edges}
    edges = tuple(sorted(pairs))
    weights = np.array([Wbar[s, t] for s, t in edges])
    return WeightedGraph(graph.node_count, edges, weights)


def laplacian_spectrum(graph: WeightedGraph, tol: float = 1e-12) -> np.ndarray:
    if not graph.is_symmetric(tol):
        raise GraphError("spectral routines need symmetric weights; call symmetrize_conductance first")
    return np.linalg.eigvalsh(laplacian_matrix(graph))


def spectral_gap(graph: WeightedGraph) -> float:
    """Second smallest Laplacian eigenvalue (0 for a single node)."""
    if graph.node_count == 1:
        return 0.0
    lam = laplacian_spectrum(graph)
    return float(max(lam[1], 0.0))


def block_laplacian(Q_L: WeightedGraph, W_R: WeightedGraph) -> np.ndarray:
    """Block-diagonal Laplacian of the joint field on the disjoint union of both graphs."""
    n, m = Q_L.node_count, W_R.node_count
    out = np.zeros((n + m, n + m))
    out[:n, :n] = laplacian_matrix(Q_L)
    out[n:, n:] = laplacian_matrix(W_R)
    return out


def automorphisms(graph: WeightedGraph, limit: int = 5040) -> list[np.ndarray]:
    """Weight-preserving node permutations, by brute force over at most ``limit`` candidates."""
    from itertools import permutations
    import math

    n = graph.node_count
    if math.factorial(n) > limit:
        raise GraphError(f"{n} nodes is too many for brute-force automorphism search")
    W = graph.weight_matrix()
    found = []
    for perm in permutations(range(n)):
        p = np.array(perm)
        if np.allclose(W[np.ix_(p, p)], W):
            found.append(p)
    return found


def in_neighborhoods(graph: WeightedGraph) -> list[np.ndarray]:
    """Edge indices grouped by target node."""
    groups: list[list[int]] = [[] for _ in range(graph.node_count)]
    for k, (_, t) in enumerate(graph.edges):
        groups[t].append(k)
    return [np.array(g, dtype=int) for g in groups]


def edge_index(edges: Sequence[tuple[int, int]]) -> dict[tuple[int, int], int]:
    return {e: k for k, e in enumerate(edges)}
