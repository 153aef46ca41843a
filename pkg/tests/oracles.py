"""Brute-force reference implementations used by the tests.

Everything here works on dense matrices and plain loops and shares no code
with the package beyond reading parameter arrays.
"""

import math

import numpy as np


def dense_normalized(num_nodes, edges):
    """Dense S^-1/2 (A + I) S^-1/2 from a symmetric (row, col) edge list."""
    a = np.zeros((num_nodes, num_nodes))
    for i, j in edges:
        a[i, j] = 1.0
    a += np.eye(num_nodes)
    d = a.sum(axis=1)
    out = np.zeros_like(a)
    for i in range(num_nodes):
        for j in range(num_nodes):
            if a[i, j]:
                out[i, j] = 1.0 / math.sqrt(d[i] * d[j])
    return out


def dense_masked(dense_adj, rows, cols, mask):
    """Zero every dense entry whose edge bit is off."""
    out = dense_adj.copy()
    for r, c, keep in zip(rows, cols, mask):
        if not keep:
            out[r, c] = 0.0
    return out


def _bn(t, gamma, beta, eps=1e-5):
    mu = t.mean(axis=0)
    var = ((t - mu) ** 2).mean(axis=0)
    return gamma * (t - mu) / np.sqrt(var + eps) + beta


def dense_forward(x, adjs, params, variant, batch_norm=False):
    """Logits of GCN / ResGCN / JKNet with one dense adjacency per layer."""
    depth = len(adjs)
    h = x
    outs = []
    for l in range(depth):
        t = adjs[l] @ (h @ params[f"W{l}"])
        last_gcn = variant == "GCN" and l == depth - 1
        if batch_norm and not last_gcn:
            t = _bn(t, params[f"bn_gamma{l}"], params[f"bn_beta{l}"])
        if last_gcn:
            return t
        u = np.maximum(t, 0.0)
        h = h + u if (variant == "ResGCN" and l > 0) else u
        outs.append(h)
    feats = h if variant == "ResGCN" else np.hstack(outs)
    return feats @ params["head"]


def mean_cross_entropy(logits, labels, nodes):
    total = 0.0
    for i in nodes:
        row = logits[i]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[labels[i]]
    return total / len(nodes)


def homophily_loop(num_nodes, edges, labels):
    """Mean same-label neighbor fraction, skipping nodes with no neighbors."""
    nbrs = [set() for _ in range(num_nodes)]
    for i, j in edges:
        if i != j:
            nbrs[i].add(j)
    fracs = [sum(labels[j] == labels[i] for j in nb) / len(nb) for i, nb in enumerate(nbrs) if nb]
    return sum(fracs) / len(fracs)


def edge_sparsity_loop(rows, cols, mask):
    total = kept = 0
    for r, c, keep in zip(rows, cols, mask):
        if r != c:
            total += 1
            kept += bool(keep)
    return kept / total if total else 1.0


def node_sparsity_loop(num_nodes, rows, cols, mask):
    live = set()
    for r, c, keep in zip(rows, cols, mask):
        if r != c and keep:
            live.add(r)
    return len(live) / num_nodes
