"""Undirected graphs, GCN renormalization and sparse products.

Graphs are immutable. The renormalized operator adds a self-loop to every
node and weights edge (i, j) by 1/sqrt((d_i + 1)(d_j + 1)), where d is the
degree without the self-loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "GraphError",
    "build_graph",
    "normalize_adjacency",
    "spmv",
    "propagate",
    "merge_graphs",
    "generate_synthetic",
    "feature_means",
]


class GraphError(ValueError):
    """Invalid graph input (bad indices, self-edges, shape mismatch)."""


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: np.ndarray  # (E, 2) int64, u < v, lexicographically sorted
    adjacency: sp.csr_matrix

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Renormalized operator; ``matrix`` is CSR with sorted column indices."""

    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def node_count(self) -> int:
        return self.matrix.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]

    def row_values(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.data[m.indptr[i]:m.indptr[i + 1]]

    def coefficient(self, i: int, j: int) -> float:
        cols = self.neighbors(i)
        k = np.searchsorted(cols, j)
        if k >= cols.size or cols[k] != j:
            return 0.0
        return float(self.row_values(i)[k])

    def power_apply(self, v: np.ndarray, k: int) -> np.ndarray:
        """Return A^k v by k repeated products; A^0 v = v."""
        out = np.asarray(v, dtype=np.float64)
        for _ in range(k):
            out = spmv(self, out)
        return out

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_graph(edges: Iterable[Sequence[int]], node_count: int) -> Graph:
    """Build a symmetric, deduplicated graph from undirected index pairs."""
    if node_count < 0:
        raise GraphError(f"node_count must be non-negative, got {node_count}")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        arr = np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must be pairs, got array of shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= node_count):
        bad = arr[(arr < 0).any(axis=1) | (arr >= node_count).any(axis=1)][0]
        raise GraphError(f"edge {tuple(int(x) for x in bad)} out of range for {node_count} nodes")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        raise GraphError(f"self-edge ({int(arr[loops][0, 0])}, {int(arr[loops][0, 0])}) not allowed")

    canon = np.sort(arr, axis=1)
    canon = np.unique(canon, axis=0) if canon.size else canon
    rows = np.concatenate([canon[:, 0], canon[:, 1]])
    cols = np.concatenate([canon[:, 1], canon[:, 0]])
    adj = sp.csr_matrix(
        (np.ones(rows.size, dtype=np.float64), (rows, cols)), shape=(node_count, node_count)
    )
    adj.sort_indices()
    return Graph(node_count=node_count, edges=canon, adjacency=adj)


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    deg = g.degrees.astype(np.float64)
    scale = 1.0 / np.sqrt(deg + 1.0)
    a_hat = (g.adjacency + sp.identity(g.node_count, format="csr")).tocsr()
    a_hat.sort_indices()
    coo = a_hat.tocoo()
    vals = scale[coo.row] * scale[coo.col]
    mat = sp.csr_matrix((vals, (coo.row, coo.col)), shape=a_hat.shape)
    mat.sort_indices()
    return NormalizedAdjacency(matrix=mat, degrees=g.degrees)


def spmv(a: NormalizedAdjacency, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != a.node_count:
        raise GraphError(f"vector of shape {v.shape} does not match {a.node_count} nodes")
    return a.matrix @ v


def propagate(a: NormalizedAdjacency, h: np.ndarray) -> np.ndarray:
    """Column-wise product A h for a dense (nodes x features) matrix."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != a.node_count:
        raise GraphError(f"matrix of shape {h.shape} does not match {a.node_count} nodes")
    return np.asarray(a.matrix @ h)


def merge_graphs(gs: Sequence[Graph]) -> Graph:
    """Disjoint union; graph k's nodes are shifted by the sizes of graphs before it."""
    if len(gs) == 0:
        raise GraphError("cannot merge an empty sequence of graphs")
    offset = 0
    parts = []
    for g in gs:
        parts.append(g.edges + offset)
        offset += g.node_count
    return build_graph(np.concatenate(parts, axis=0), offset)


def generate_synthetic(kind: str, n: int, p: float = 0.0, seed: int = 0) -> Graph:
    """Deterministic test graphs: ``ring``, ``star`` or ``erdos_renyi`` (G(n, p))."""
    if n < 1:
        raise GraphError(f"n must be >= 1, got {n}")
    if kind == "ring":
        if n < 2:
            return build_graph([], n)
        idx = np.arange(n)
        return build_graph(np.stack([idx, (idx + 1) % n], axis=1), n)
    if kind == "star":
        leaves = np.arange(1, n)
        return build_graph(np.stack([np.zeros_like(leaves), leaves], axis=1), n)
    if kind == "erdos_renyi":
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"p must lie in [0, 1], got {p}")
        rng = np.random.default_rng(seed)
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < p
        return build_graph(np.stack([iu[keep], ju[keep]], axis=1), n)
    raise GraphError(f"unknown graph kind {kind!r}")


def feature_means(x: np.ndarray) -> np.ndarray:
    """Per-node mean over feature entries (the input vector of the Virgo ratios)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise GraphError(f"features need a non-empty second dimension, got shape {x.shape}")
    return x.mean(axis=1)
