"""Full-batch GCN / ResGCN / JKNet with hand-written reverse mode.

Every layer ``l`` computes ``Z = H W``, ``T = A_l Z`` over its own masked
adjacency, so gradients are available both for the weights and for each
surviving adjacency entry: ``dL/dA_l[i, j] = <dL/dT[i], Z[j]>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .graph import GraphError

VARIANTS = ("GCN", "ResGCN", "JKNet")
BN_EPS = 1e-5


class NumericalError(FloatingPointError):
    """A NaN/Inf showed up in the forward pass or in a gradient."""

    def __init__(self, message, layer=None, epoch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: Literal["GCN", "ResGCN", "JKNet"]
    depth: int
    input_dim: int
    num_classes: int
    hidden_dim: int = 64
    activation: str = "relu"
    seed: int = 0
    dropout: float = 0.0
    batch_norm: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if min(self.input_dim, self.hidden_dim, self.num_classes) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.activation != "relu":
            raise ValueError("only ReLU activation is supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def layer_shapes(self):
        """(fan_in, fan_out) of each aggregation layer's weight."""
        d, f, h, c = self.depth, self.input_dim, self.hidden_dim, self.num_classes
        shapes = []
        for l in range(d):
            fan_in = f if l == 0 else h
            fan_out = c if (self.variant == "GCN" and l == d - 1) else h
            shapes.append((fan_in, fan_out))
        return shapes

    def head_shape(self):
        if self.variant == "ResGCN":
            return (self.hidden_dim, self.num_classes)
        if self.variant == "JKNet":
            return (self.depth * self.hidden_dim, self.num_classes)
        return None

    def bn_layers(self):
        if not self.batch_norm:
            return []
        last = self.depth - 1 if self.variant == "GCN" else self.depth
        return list(range(last))


@dataclass(eq=False)
class ModelState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    def copy(self):
        return ModelState({k: p.copy() for k, p in self.params.items()},
                          {k: p.copy() for k, p in self.m.items()},
                          {k: p.copy() for k, p in self.v.items()},
                          self.step_count)

    def weight(self, layer):
        return self.params[f"W{layer}"]


@dataclass(eq=False)
class ForwardTape:
    H: list  # layer inputs
    H_in: list  # layer inputs after dropout
    Z: list  # H_in @ W
    T: list  # A_l @ Z
    S: list  # pre-activation (T after optional batch norm)
    logits: np.ndarray
    probs: np.ndarray
    head_in: np.ndarray | None
    drop: list
    bn_cache: dict
    state_id: int
    step_count: int
    diagnostics: dict = field(default_factory=lambda: {"zero_norm_rows": 0})

    @property
    def predictions(self):
        return self.probs


@dataclass(eq=False)
class Gradients:
    d_weights: dict[str, np.ndarray]
    d_adj: list  # per layer, length num_edges; zero on masked entries


def init_params(config: ModelConfig) -> ModelState:
    """Glorot-uniform weights, unit/zero batch-norm affine, zero Adam moments."""
    rng = np.random.default_rng(config.seed)
    params = {}

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    for l, shape in enumerate(config.layer_shapes()):
        params[f"W{l}"] = glorot(*shape)
    if config.head_shape() is not None:
        params["head"] = glorot(*config.head_shape())
    for l in config.bn_layers():
        width = config.layer_shapes()[l][1]
        params[f"bn_gamma{l}"] = np.ones(width)
        params[f"bn_beta{l}"] = np.zeros(width)
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}  # noqa: E731
    return ModelState(params, zeros(), zeros(), 0)


def _check_finite(arr, layer, what):
    # layer is 1-based, matching the CSV outputs
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite {what} at layer {layer}", layer=layer)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _dropout(x, p, rng):
    if p <= 0.0 or rng is None:
        return x, None
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * scale, scale


def forward(graph, adjs, state: ModelState, config: ModelConfig, *, rng=None) -> ForwardTape:
    """Run the network on every node.

    ``adjs`` holds one (masked) :class:`NormalizedAdjacency` per layer.
    Dropout is only applied when ``rng`` is given and ``config.dropout > 0``.
    """
    if len(adjs) != config.depth:
        raise GraphError(f"need {config.depth} adjacency layers, got {len(adjs)}")
    X = graph.features
    if X.shape[1] != config.input_dim:
        raise GraphError(f"features have {X.shape[1]} columns, model expects {config.input_dim}")
    D = config.depth
    bn = set(config.bn_layers())
    H, H_in, Z, T, S, drop = [], [], [], [], [], []
    bn_cache = {}
    h = X
    outputs = []
    for l in range(D):
        H.append(h)
        hin, mask = _dropout(h, config.dropout, rng)
        H_in.append(hin)
        drop.append(mask)
        with np.errstate(over="ignore", invalid="ignore"):
            z = hin @ state.params[f"W{l}"]
            t = adjs[l].csr @ z
        _check_finite(t, l + 1, "aggregation")
        Z.append(z)
        T.append(t)
        if l in bn:
            mu = t.mean(axis=0)
            inv_std = 1.0 / np.sqrt(t.var(axis=0) + BN_EPS)
            xhat = (t - mu) * inv_std
            s = state.params[f"bn_gamma{l}"] * xhat + state.params[f"bn_beta{l}"]
            bn_cache[l] = (xhat, inv_std)
        else:
            s = t
        S.append(s)
        if config.variant == "GCN" and l == D - 1:
            break
        u = np.maximum(s, 0.0)
        if config.variant == "ResGCN" and l > 0:
            h = h + u
        else:
            h = u
        outputs.append(h)

    head_in = None
    if config.variant == "GCN":
        logits = S[-1]
    else:
        feats = h if config.variant == "ResGCN" else np.concatenate(outputs, axis=1)
        head_in, mask = _dropout(feats, config.dropout, rng)
        drop.append(mask)
        logits = head_in @ state.params["head"]
        H.append(h)
    _check_finite(logits, D, "logits")
    return ForwardTape(H, H_in, Z, T, S, logits, _softmax(logits), head_in, drop, bn_cache,
                       id(state), state.step_count)


def _split_nodes(graph, split):
    if isinstance(split, str):
        split = graph.split(split)
    split = np.asarray(split, dtype=np.int64)
    if split.size == 0:
        raise ValueError("split is empty")
    return split


def loss_and_accuracy(tape: ForwardTape, graph, split):
    """Mean cross-entropy and argmax accuracy over ``split``."""
    nodes = _split_nodes(graph, split)
    logits = tape.logits[nodes]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = graph.labels[nodes]
    loss = float(-log_probs[np.arange(len(nodes)), y].mean())
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return max(loss, 0.0), acc


def accuracy(tape, graph, split):
    nodes = _split_nodes(graph, split)
    return float(np.mean(tape.logits[nodes].argmax(axis=1) == graph.labels[nodes]))


def _bn_backward(dS, xhat, inv_std, gamma):
    n = dS.shape[0]
    dxhat = dS * gamma
    dgamma = (dS * xhat).sum(axis=0)
    dbeta = dS.sum(axis=0)
    dT = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dT, dgamma, dbeta


def backward(tape: ForwardTape, graph, adjs, state: ModelState, config: ModelConfig, split,
             *, adj_grads=True) -> Gradients:
    """Reverse-mode gradients of the mean training loss.

    Returns gradients for every parameter and, unless ``adj_grads`` is
    False, for every surviving adjacency entry of every layer.
    """
    if tape.state_id != id(state) or tape.step_count != state.step_count:
        raise StaleTapeError("tape was recorded for a different parameter version")
    nodes = _split_nodes(graph, split)
    D = config.depth
    P = tape.probs
    dlogits = np.zeros_like(P)
    dlogits[nodes] = P[nodes]
    dlogits[nodes, graph.labels[nodes]] -= 1.0
    dlogits /= len(nodes)

    grads = {}
    d_adj = [None] * D
    dH = [None] * (D + 1)  # gradient w.r.t. output of layer l-1, i.e. H[l]

    if config.variant != "GCN":
        grads["head"] = tape.head_in.T @ dlogits
        dhead = dlogits @ state.params["head"].T
        if tape.drop[-1] is not None:
            dhead = dhead * tape.drop[-1]
        if config.variant == "ResGCN":
            dH[D] = dhead
        else:
            w = config.hidden_dim
            for k in range(1, D + 1):
                dH[k] = dhead[:, (k - 1) * w:k * w]

    bn = set(config.bn_layers())
    for l in range(D - 1, -1, -1):
        if config.variant == "GCN" and l == D - 1:
            dS = dlogits
        else:
            dS = dH[l + 1] * (tape.S[l] > 0)
        if l in bn:
            xhat, inv_std = tape.bn_cache[l]
            dT, grads[f"bn_gamma{l}"], grads[f"bn_beta{l}"] = _bn_backward(
                dS, xhat, inv_std, state.params[f"bn_gamma{l}"])
        else:
            dT = dS
        adj = adjs[l]
        if adj_grads:
            g = np.zeros(adj.num_edges)
            s = adj.surviving
            g[s] = np.einsum("ij,ij->i", dT[adj.rows[s]], tape.Z[l][adj.cols[s]])
            d_adj[l] = g
        dZ = adj.csr_t @ dT
        grads[f"W{l}"] = tape.H_in[l].T @ dZ
        if l == 0:
            break
        dh = dZ @ state.params[f"W{l}"].T
        if tape.drop[l] is not None:
            dh = dh * tape.drop[l]
        if config.variant == "ResGCN":
            # H[l+1] = H[l] + relu(S[l]) for l >= 1
            dh = dh + dH[l + 1]
        if dH[l] is not None:
            dh = dh + dH[l]
        dH[l] = dh
    return Gradients(grads, d_adj)


def adam_step(state: ModelState, grads: Gradients, lr, *, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of every parameter, in place."""
    for name, g in grads.d_weights.items():
        if not np.all(np.isfinite(g)):
            found = re.search(r"(\d+)$", name)
            layer = int(found.group(1)) + 1 if found else None
            raise NumericalError(f"non-finite gradient for {name}", layer=layer)
    t = state.step_count + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.d_weights.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        state.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step_count = t
    return state


def cosine_distance_per_node(tape: ForwardTape, layer):
    """``1 - cos(Z_i, T_i)`` per node at ``layer``; zero-norm rows give 1.0."""
    z = tape.Z[layer]
    t = tape.T[layer]
    nz = np.linalg.norm(z, axis=1)
    nt = np.linalg.norm(t, axis=1)
    denom = nz * nt
    ok = denom > 0
    out = np.ones(len(z))
    out[ok] = 1.0 - np.einsum("ij,ij->i", z[ok], t[ok]) / denom[ok]
    tape.diagnostics["zero_norm_rows"] += int((~ok).sum())
    return np.clip(out, 0.0, 2.0)


def evaluate_loss(graph, adjs, state, config, split):
    return loss_and_accuracy(forward(graph, adjs, state, config), graph, split)[0]


def perturbed(adjs, state, target, delta):
    """Copies of ``(adjs, state)`` with one scalar shifted by ``delta``.

    ``target`` is ``("weight", name, index)`` or ``("adj", layer, edge_id)``.
    """
    kind = target[0]
    if kind == "weight":
        _, name, index = target
        probe = state.copy()
        probe.params[name][index] += delta
        return adjs, probe
    if kind == "adj":
        _, layer, edge = target
        adj = adjs[layer]
        if not adj.keep[edge]:
            raise GraphError(f"edge {edge} is masked at layer {layer}")
        vals = adj.values.copy()
        vals[edge] += delta
        return adjs[:layer] + [adj.with_values(vals)] + adjs[layer + 1:], state
    raise ValueError(f"unknown target kind {kind!r}")


def finite_diff_grad(graph, adjs, state, config, split, target, step=1e-3):
    """Central-difference derivative ``(L(x+h) - L(x-h)) / 2h`` for one scalar."""
    up = evaluate_loss(graph, *perturbed(adjs, state, target, step), config, split)
    down = evaluate_loss(graph, *perturbed(adjs, state, target, -step), config, split)
    return (up - down) / (2.0 * step)
