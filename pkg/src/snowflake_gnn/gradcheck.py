"""Analytic vs central finite-difference gradients on small random instances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    VARIANTS,
    ModelConfig,
    backward,
    forward,
    init_params,
    loss_and_accuracy,
    perturbed,
)
from .graph import Graph, LayerMaskSet, normalize
from .training import layer_adjacencies

STEP = 1e-3
# relative error denominators never drop below this, so derivatives that are
# zero up to rounding do not blow up the ratio
DENOM_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    trials: int
    tolerance: float
    max_error: dict = field(default_factory=dict)  # (variant, kind) -> max relative error
    compared: dict = field(default_factory=dict)  # (variant, kind) -> number of targets
    skipped_kinks: int = 0

    @property
    def passed(self):
        return all(err < self.tolerance for err in self.max_error.values())

    def rows(self):
        for variant in VARIANTS:
            for kind in ("weight", "adj"):
                key = (variant, kind)
                if key in self.max_error:
                    err = self.max_error[key]
                    yield variant, kind, self.compared[key], err, err < self.tolerance


def random_instance(rng, variant, max_nodes=12, max_depth=4, batch_norm=False):
    """A small random graph, model, weights and pruned per-layer adjacencies."""
    n = int(rng.integers(4, max_nodes + 1))
    depth = int(rng.integers(1, max_depth + 1))
    feats = int(rng.integers(2, 5))
    classes = 3
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(len(iu)) < 0.35
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    labels = rng.integers(0, classes, size=n)
    perm = rng.permutation(n)
    n_train = max(2, n // 2)
    graph = Graph.from_edges(n, edges, rng.standard_normal((n, feats)), labels,
                             train=np.sort(perm[:n_train]), val=np.sort(perm[n_train:]),
                             symmetrize=True)
    config = ModelConfig(variant, depth, feats, classes, hidden_dim=4,
                         seed=int(rng.integers(2**31)), batch_norm=batch_norm)
    adj = normalize(graph)
    masks = LayerMaskSet.full(adj, depth)
    # knock out a random, depth-monotone subset of entries
    prunable = ~masks.self_loop
    for l in range(depth):
        drop = prunable & (rng.random(adj.num_edges) < 0.2)
        masks.masks[l:, drop] = False
    return graph, config, init_params(config), layer_adjacencies(adj, masks)


def _relu_pattern(tape, config):
    last = config.depth - 1 if config.variant == "GCN" else config.depth
    return [tape.S[l] > 0 for l in range(last)]


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _targets(state, adjs):
    for name, p in state.params.items():
        for idx in np.ndindex(p.shape):
            yield "weight", ("weight", name, idx)
    for l, adj in enumerate(adjs):
        for e in adj.surviving:
            yield "adj", ("adj", l, int(e))


def check_instance(graph, config, state, adjs, result, step=STEP):
    """Compare every weight and every surviving adjacency entry of one instance.

    Targets whose +/- step crosses a ReLU kink are counted and skipped: the
    loss is not differentiable there, so the difference quotient is no
    reference for the derivative.
    """
    tape = forward(graph, adjs, state, config)
    grads = backward(tape, graph, adjs, state, config, "train")
    base = _relu_pattern(tape, config)
    for kind, target in _targets(state, adjs):
        losses = []
        crossed = False
        for delta in (step, -step):
            t = forward(graph, *perturbed(adjs, state, target, delta), config)
            crossed = crossed or not _same_pattern(base, _relu_pattern(t, config))
            losses.append(loss_and_accuracy(t, graph, "train")[0])
        if crossed:
            result.skipped_kinks += 1
            continue
        numeric = (losses[0] - losses[1]) / (2.0 * step)
        if kind == "weight":
            analytic = grads.d_weights[target[1]][target[2]]
        else:
            analytic = grads.d_adj[target[1]][target[2]]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOM_FLOOR)
        key = (config.variant, kind)
        result.max_error[key] = max(result.max_error.get(key, 0.0), err)
        result.compared[key] = result.compared.get(key, 0) + 1
    return result


def run_gradcheck(trials=50, tolerance=1e-4, *, max_nodes=12, max_depth=4, seed=0, step=STEP,
                  batch_norm=False):
    """Run ``trials`` random instances, cycling through every variant."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    result = GradcheckResult(trials, tolerance)
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        variant = VARIANTS[trial % len(VARIANTS)]
        check_instance(*random_instance(rng, variant, max_nodes, max_depth, batch_norm), result,
                       step)
    return result
