"""Sparse graph containers, symmetric normalization and per-layer edge masks.

Edges are stored as matrix entries ``(row, col)`` in CSR order. Row ``i`` of
the adjacency is what node ``i`` aggregates: ``T[i] = sum_j A[i, j] Z[j]``.
An edge ``(i, j)`` in an edge list therefore maps to entry ``(i, j)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graph input (duplicates, bad indices, bad splits)."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable graph with features, labels and a train/val/test split.

    ``indptr``/``indices`` form the CSR pattern of the adjacency. Self-loops
    are only present after :meth:`with_self_loops`.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    val: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("indptr", "indices", "features", "labels", "train", "val", "test"):
            arr = getattr(self, name)
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
        if len(self.indptr) != self.num_nodes + 1:
            raise GraphError("indptr length must be num_nodes + 1")
        if np.any(np.diff(self.indptr) < 0):
            raise GraphError("CSR row pointers must be non-decreasing")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.num_nodes):
            raise GraphError("edge index out of range")
        if self.features.shape[0] != self.num_nodes or self.labels.shape[0] != self.num_nodes:
            raise GraphError("features and labels need one row per node")
        splits = [np.asarray(s) for s in (self.train, self.val, self.test)]
        seen = np.zeros(self.num_nodes, dtype=np.int64)
        for s in splits:
            if len(s) and (s.min() < 0 or s.max() >= self.num_nodes):
                raise GraphError("split index out of range")
            np.add.at(seen, s, 1)
        if np.any(seen > 1):
            raise GraphError("train/val/test splits overlap")

    @classmethod
    def from_edges(cls, num_nodes, edges, features=None, labels=None,
                   train=None, val=None, test=None, *, symmetrize=False):
        """Build a graph from ``(row, col)`` pairs.

        Duplicate pairs and out-of-range indices are rejected; use
        :func:`dedup_edges` first when reading untrusted files.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if num_nodes < 1:
            raise GraphError("graph must have at least one node")
        bad = (edges < 0) | (edges >= num_nodes)
        if bad.any():
            i = int(np.flatnonzero(bad.any(axis=1))[0])
            raise GraphError(f"edge {tuple(edges[i])} has a node index outside [0, {num_nodes})")
        if symmetrize:
            edges = np.concatenate([edges, edges[:, ::-1]])
            edges = np.unique(edges, axis=0)
        keys = edges[:, 0] * num_nodes + edges[:, 1]
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        dup = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
        if len(dup):
            pair = tuple(int(v) for v in edges[order[dup[0]]])
            raise GraphError(f"duplicate edge {pair}")
        edges = edges[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(indptr, edges[:, 0] + 1, 1)
        indptr = np.cumsum(indptr)
        if features is None:
            features = np.eye(num_nodes)
        if labels is None:
            labels = np.zeros(num_nodes, dtype=np.int64)
        empty = np.empty(0, dtype=np.int64)
        return cls(
            num_nodes=num_nodes,
            indptr=indptr,
            indices=edges[:, 1].copy(),
            features=np.asarray(features, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.int64),
            train=empty if train is None else np.asarray(train, dtype=np.int64),
            val=empty if val is None else np.asarray(val, dtype=np.int64),
            test=empty if test is None else np.asarray(test, dtype=np.int64),
        )

    @property
    def num_edges(self):
        return len(self.indices)

    @cached_property
    def rows(self):
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        rows.setflags(write=False)
        return rows

    @property
    def cols(self):
        return self.indices

    @property
    def edges(self):
        return np.stack([self.rows, self.cols], axis=1)

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def num_features(self):
        return self.features.shape[1]

    def has_self_loops(self):
        loops = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(loops, self.rows[self.rows == self.cols], 1)
        return bool(np.all(loops == 1))

    def with_self_loops(self):
        """Return a copy where every node has exactly one ``(i, i)`` entry."""
        keep = self.rows != self.cols
        loops = np.arange(self.num_nodes)
        edges = np.concatenate([self.edges[keep], np.stack([loops, loops], axis=1)])
        return Graph.from_edges(self.num_nodes, edges, self.features, self.labels,
                                self.train, self.val, self.test)

    def with_split(self, train, val, test):
        return Graph(self.num_nodes, self.indptr, self.indices, self.features, self.labels,
                     np.asarray(train, dtype=np.int64), np.asarray(val, dtype=np.int64),
                     np.asarray(test, dtype=np.int64))

    def with_features(self, features):
        return Graph(self.num_nodes, self.indptr, self.indices,
                     np.asarray(features, dtype=np.float64), self.labels,
                     self.train, self.val, self.test)

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def dedup_edges(edges):
    """Drop repeated ``(row, col)`` pairs, keeping first occurrences in order.

    Returns the unique edges and the number of dropped duplicates.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    _, first = np.unique(edges, axis=0, return_index=True)
    first = np.sort(first)
    return edges[first], len(edges) - len(first)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``S^-1/2 (A + I) S^-1/2`` on the self-loop-augmented pattern.

    ``values`` holds the current entries (zero where masked) and ``keep``
    flags surviving entries, so masked layers share the base pattern.
    """

    num_nodes: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    keep: np.ndarray

    def __post_init__(self):
        for arr in (self.rows, self.cols, self.values, self.keep):
            arr.setflags(write=False)

    @property
    def num_edges(self):
        return len(self.rows)

    @cached_property
    def self_loop(self):
        loop = self.rows == self.cols
        loop.setflags(write=False)
        return loop

    @cached_property
    def surviving(self):
        """Edge ids (positions in the base pattern) of unmasked entries."""
        idx = np.flatnonzero(self.keep)
        idx.setflags(write=False)
        return idx

    @cached_property
    def csr(self):
        """CSR of surviving entries only, in base-pattern order.

        Masked entries are absent rather than stored as explicit zeros, so a
        row with only its self-loop left reduces to ``A_ii * Z_i`` exactly.
        """
        s = self.surviving
        return sp.csr_matrix((self.values[s], (self.rows[s], self.cols[s])),
                             shape=(self.num_nodes, self.num_nodes))

    @cached_property
    def csr_t(self):
        return self.csr.T.tocsr()

    def todense(self):
        out = np.zeros((self.num_nodes, self.num_nodes))
        s = self.surviving
        out[self.rows[s], self.cols[s]] = self.values[s]
        return out

    def with_values(self, values):
        """Same pattern and mask, different entry values (masked stay zero)."""
        values = np.where(self.keep, values, 0.0)
        return NormalizedAdjacency(self.num_nodes, self.rows, self.cols, values, self.keep.copy())


def normalize(graph):
    """Symmetric degree normalization with self-loops added.

    Entry ``(i, j)`` becomes ``1 / sqrt(d_i d_j)`` where ``d`` counts row
    entries of ``A + I``.
    """
    if graph.num_nodes < 1:
        raise GraphError("cannot normalize an empty graph")
    aug = graph if graph.has_self_loops() else graph.with_self_loops()
    rows, cols = aug.rows, aug.cols
    deg = np.diff(aug.indptr).astype(np.float64)
    values = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return NormalizedAdjacency(aug.num_nodes, rows.copy(), cols.copy(), values,
                               np.ones(len(rows), dtype=bool))


def apply_mask(adj, mask_layer, *, renormalize=False):
    """Zero the entries where ``mask_layer`` is False.

    Surviving values are left untouched unless ``renormalize`` is set, in
    which case they are recomputed from the surviving row degrees.
    """
    mask_layer = np.asarray(mask_layer, dtype=bool)
    if mask_layer.shape != (adj.num_edges,):
        raise GraphError(f"mask has length {mask_layer.shape[0] if mask_layer.ndim else 0}, "
                         f"expected {adj.num_edges}")
    keep = adj.keep & mask_layer
    if renormalize:
        deg = np.bincount(adj.rows[keep], minlength=adj.num_nodes).astype(np.float64)
        deg[deg == 0] = 1.0
        values = np.where(keep, 1.0 / np.sqrt(deg[adj.rows] * deg[adj.cols]), 0.0)
    else:
        values = np.where(keep, adj.values, 0.0)
    return NormalizedAdjacency(adj.num_nodes, adj.rows, adj.cols, values, keep)


NEVER = np.inf


@dataclass(eq=False)
class LayerMaskSet:
    """Per-layer boolean edge masks plus per-node stop depths.

    ``masks[l]`` belongs to layer ``l`` (0-based). ``stop_depth`` uses
    1-based depths so that a node stopped at depth ``r`` has its row cleared
    in ``masks[r - 1:]``; ``inf`` means never stopped.
    """

    masks: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    stop_depth: np.ndarray

    @classmethod
    def full(cls, adj, depth):
        if depth < 1:
            raise GraphError("depth must be >= 1")
        return cls(np.ones((depth, adj.num_edges), dtype=bool), adj.rows, adj.cols,
                   np.full(adj.num_nodes, NEVER))

    @property
    def depth(self):
        return self.masks.shape[0]

    @property
    def num_nodes(self):
        return len(self.stop_depth)

    @cached_property
    def self_loop(self):
        return self.rows == self.cols

    def copy(self):
        return LayerMaskSet(self.masks.copy(), self.rows, self.cols, self.stop_depth.copy())

    def check_invariants(self):
        """Raise AssertionError if any structural invariant is violated."""
        m = self.masks
        assert np.all(m[:, self.self_loop]), "self-loop bit cleared"
        # zero at layer l must stay zero at every deeper layer
        assert not np.any(m[1:] & ~m[:-1]), "depth-monotone zeros violated"
        for node in np.flatnonzero(np.isfinite(self.stop_depth)):
            r = int(self.stop_depth[node])
            row = (self.rows == node) & ~self.self_loop
            assert not np.any(m[r - 1:, row]), f"stopped node {node} still aggregates"


def propagate_zeros(masks, source_layer):
    """AND ``masks[source_layer]`` into every deeper layer, in place."""
    if not 0 <= source_layer < masks.depth:
        raise IndexError(f"layer {source_layer} outside [0, {masks.depth})")
    masks.masks[source_layer + 1:] &= masks.masks[source_layer]
    return masks


def edge_sparsity(masks, layer):
    """Fraction of non-self-loop edges still alive at ``layer``."""
    prunable = ~masks.self_loop
    total = int(prunable.sum())
    if total == 0:
        return 1.0
    return float(np.count_nonzero(masks.masks[layer] & prunable)) / total


def node_sparsity(masks, layer):
    """Fraction of nodes whose row keeps at least one non-self-loop entry."""
    live = masks.masks[layer] & ~masks.self_loop
    has_edge = np.zeros(masks.num_nodes, dtype=bool)
    has_edge[masks.rows[live]] = True
    return float(has_edge.mean())


def homophily_ratio(graph, *, return_excluded=False):
    """Mean fraction of same-label neighbours over nodes (self-loops ignored).

    Nodes without neighbours are left out of the mean; with
    ``return_excluded`` the count of such nodes is returned as well.
    """
    rows, cols = graph.rows, graph.cols
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    deg = np.bincount(rows, minlength=graph.num_nodes)
    same = np.bincount(rows, weights=(graph.labels[rows] == graph.labels[cols]).astype(float),
                       minlength=graph.num_nodes)
    ok = deg > 0
    excluded = int((~ok).sum())
    if excluded:
        warnings.warn(f"{excluded} node(s) without neighbours excluded from homophily ratio",
                      stacklevel=2)
    ratio = float(np.mean(same[ok] / deg[ok])) if ok.any() else float("nan")
    return (ratio, excluded) if return_excluded else ratio
