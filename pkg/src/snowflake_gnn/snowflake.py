"""Snowflake pruning controllers.

v1 removes the adjacency entries with the smallest accumulated absolute
gradient, one layer at a time from the deepest layer inward, and pushes the
resulting zeros into every deeper layer. v2 stops a node at the first depth
where its pre- and post-aggregation representations become nearly parallel,
clearing its row from that depth on.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .engine import cosine_distance_per_node
from .graph import propagate_zeros
from .training import (
    PruneEvent,
    Trainer,
    determinism,
    finish_report,
    new_report,
    stop_histogram,
)

SCHEMES = ("OneShot", "Iterative", "Reinit")


@dataclass
class SnoHv1Config:
    prune_rate: float = 30.0  # percent of surviving entries removed per layer
    window: int = 30  # epochs between prune events
    scheme: Literal["OneShot", "Iterative", "Reinit"] = "OneShot"
    iterative_rounds: int = 3
    reinit_epochs: int = 300

    def __post_init__(self):
        if not 0 < self.prune_rate < 100:
            raise ValueError("prune_rate must be in (0, 100)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.iterative_rounds < 1:
            raise ValueError("iterative_rounds must be >= 1")
        if self.scheme == "Iterative" and self.iterative_rounds > self.window:
            raise ValueError("iterative_rounds cannot exceed the window length")
        if self.reinit_epochs < 1:
            raise ValueError("reinit_epochs must be >= 1")


def default_rho(depth):
    """Cosine-distance threshold used for a given depth when none is set."""
    if depth <= 8:
        return 0.2
    if depth <= 16:
        return 0.1
    return 0.05


@dataclass
class SnoHv2Config:
    threshold_mode: Literal["absolute", "relative"] = "absolute"
    rho: float | None = None  # absolute threshold; None picks by depth
    relative_p: float = 10.0  # percent of the first-layer distance (relative mode)
    check_every: int = 30
    warmup: int = 50

    def __post_init__(self):
        if self.threshold_mode not in ("absolute", "relative"):
            raise ValueError("threshold_mode must be 'absolute' or 'relative'")
        if self.rho is not None and self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not 0 < self.relative_p <= 100:
            raise ValueError("relative_p must be in (0, 100]")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")

    def resolved_rho(self, depth):
        return default_rho(depth) if self.rho is None else self.rho

    def is_probe_epoch(self, epoch):
        return epoch >= max(self.warmup, 1) and (epoch - self.warmup) % self.check_every == 0


@dataclass
class PruneState:
    masks: object
    next_layer_to_prune: int | None = None
    events: list = field(default_factory=list)


def _removal_count(rate, n):
    # the tiny slack keeps e.g. 29% of 100 from flooring to 28
    return int(math.floor(rate * n / 100.0 + 1e-9))


def snohv1_prune_layer(grads_accum, masks, layer, p, *, count=None):
    """Remove the ``p``% surviving entries of ``layer`` with smallest score.

    Ties break toward lower edge ids. Self-loops are never candidates. The
    zeros are then propagated to all deeper layers. ``count`` overrides the
    percentage with an exact number of removals. Returns the removed ids.
    """
    candidates = np.flatnonzero(masks.masks[layer] & ~masks.self_loop)
    if len(candidates) == 0:
        warnings.warn(f"layer {layer} has no prunable entries left", stacklevel=2)
        return masks, np.empty(0, dtype=np.int64)
    n = _removal_count(p, len(candidates)) if count is None else min(count, len(candidates))
    scores = np.asarray(grads_accum)[candidates]
    order = np.lexsort((candidates, scores))
    removed = np.sort(candidates[order[:n]])
    masks.masks[layer, removed] = False
    propagate_zeros(masks, layer)
    return masks, removed


def _split_counts(total, parts):
    cuts = [total * j // parts for j in range(parts + 1)]
    return [b - a for a, b in zip(cuts, cuts[1:])]


def snohv1_run(graph, config: SnoHv1Config, model_config, train_config, *, adj=None):
    """Gradient-guided layer-wise pruning with the configured scheme.

    The deepest layer is pruned first. OneShot prunes each layer once after
    ``window`` epochs of gradient accumulation; Iterative spreads that removal
    over ``iterative_rounds`` evenly spaced sub-events inside the window;
    Reinit draws fresh weights after every prune and trains
    ``reinit_epochs`` before the next one, ending with a final retraining
    phase on the frozen masks.
    """
    started = time.perf_counter()
    report = new_report("snohv1", model_config, train_config, {"snohv1": config.__dict__})
    D = model_config.depth
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        ps = PruneState(trainer.masks, D - 1)
        accum = np.zeros(trainer.adj.num_edges)

        def prune(layer, count=None):
            if not np.any(trainer.masks.masks[layer] & ~trainer.masks.self_loop):
                ps.events.append(PruneEvent(trainer.epoch, layer, "warning", 0,
                                            "no prunable entries left"))
                return
            _, removed = snohv1_prune_layer(accum, trainer.masks, layer, config.prune_rate,
                                            count=count)
            ps.events.append(PruneEvent(trainer.epoch, layer, "edges", len(removed)))

        if config.scheme == "Reinit":
            windows = [config.window] + [config.reinit_epochs] * (D - 1)
            for i, layer in enumerate(range(D - 1, -1, -1)):
                accum[:] = 0.0
                for _ in range(windows[i]):
                    _, grads = trainer.step(adj_grads=True)
                    accum += np.abs(grads.d_adj[layer])
                    trainer.maybe_log_distances(report)
                prune(layer)
                ps.next_layer_to_prune = layer - 1 if layer > 0 else None
                trainer.reinitialize(model_config.seed + 1000 * (i + 1))
            report.selection_start = trainer.epoch + 1
            for _ in range(config.reinit_epochs):
                trainer.step()
                trainer.maybe_log_distances(report)
        else:
            rounds = config.iterative_rounds if config.scheme == "Iterative" else 1
            sub_windows = _split_counts(config.window, rounds)
            total_epochs = max(train_config.epochs, D * config.window)
            layer = D - 1
            sub, sub_epoch, plan = 0, 0, None
            while trainer.epoch < total_epochs:
                _, grads = trainer.step(adj_grads=layer is not None)
                trainer.maybe_log_distances(report)
                if layer is None:
                    continue
                accum += np.abs(grads.d_adj[layer])
                sub_epoch += 1
                if sub_epoch < sub_windows[sub]:
                    continue
                if plan is None:
                    live = int(np.count_nonzero(trainer.masks.masks[layer]
                                                & ~trainer.masks.self_loop))
                    plan = _split_counts(_removal_count(config.prune_rate, live), rounds)
                prune(layer, plan[sub])
                accum[:] = 0.0
                sub, sub_epoch = sub + 1, 0
                if sub == rounds:
                    layer = layer - 1 if layer > 0 else None
                    ps.next_layer_to_prune = layer
                    sub, plan = 0, None
    report.events = ps.events
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, ps, finish_report(report, trainer, started)


def layer_distances(tape, depth):
    return np.stack([cosine_distance_per_node(tape, l) for l in range(depth)])


def snohv2_evaluate_stops(tape, masks, config: SnoHv2Config, first_layer_distances=None):
    """Find the first depth (>= 2) at which each running node falls below threshold.

    Returns ``(node, depth)`` pairs with 1-based depths. Nodes that already
    stopped are skipped.
    """
    D = masks.depth
    if D < 2:
        return []
    dist = layer_distances(tape, D)
    if config.threshold_mode == "absolute":
        thresh = np.full(masks.num_nodes, config.resolved_rho(D))
    else:
        ref = dist[0] if first_layer_distances is None else np.asarray(first_layer_distances)
        thresh = config.relative_p / 100.0 * ref
    below = dist[1:] < thresh[None, :]
    running = ~np.isfinite(masks.stop_depth)
    hit = below.any(axis=0) & running
    first = below.argmax(axis=0) + 2
    nodes = np.flatnonzero(hit)
    return [(int(i), int(first[i])) for i in nodes]


def snohv2_prune(masks, stops, *, events=None, epoch=0):
    """Clear each stopped node's non-self-loop row from its stop depth on.

    Requests for a node that already stopped at the same or a shallower
    depth are ignored (noted in ``events`` when given).
    """
    by_depth = {}
    for node, depth in stops:
        prev = masks.stop_depth[node]
        if np.isfinite(prev) and prev <= depth:
            if events is not None:
                events.append(PruneEvent(epoch, depth - 1, "warning", 0,
                                         f"node {node} already stopped at depth {int(prev)}"))
            continue
        masks.stop_depth[node] = depth
        by_depth.setdefault(depth, []).append(node)
    prunable = ~masks.self_loop
    for depth, nodes in sorted(by_depth.items()):
        row_hit = np.zeros(masks.num_nodes, dtype=bool)
        row_hit[nodes] = True
        sel = row_hit[masks.rows] & prunable
        masks.masks[depth - 1:, sel] = False
        if events is not None:
            events.append(PruneEvent(epoch, depth - 1, "nodes", len(nodes)))
    return masks


def run_snohv2_trainer(trainer, config, report, ps, *, sample=None):
    """Training loop shared by plain SnoHv2 and DropEdge + SnoHv2."""
    for _ in range(trainer.train_config.epochs):
        keep = sample(trainer.epoch + 1) if sample is not None else None
        trainer.step(sample_keep=keep)
        if config.is_probe_epoch(trainer.epoch):
            tape = trainer.log_distances(report)
            ref = cosine_distance_per_node(tape, 0) if config.threshold_mode == "relative" else None
            stops = snohv2_evaluate_stops(tape, trainer.masks, config, ref)
            snohv2_prune(trainer.masks, stops, events=ps.events, epoch=trainer.epoch)
        else:
            trainer.maybe_log_distances(report)


def snohv2_run(graph, config: SnoHv2Config, model_config, train_config, *, adj=None):
    """Train while periodically stopping nodes whose aggregation stopped mattering."""
    started = time.perf_counter()
    extra = {"snohv2": {**config.__dict__, "rho": config.resolved_rho(model_config.depth)}}
    report = new_report("snohv2", model_config, train_config, extra)
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        ps = PruneState(trainer.masks)
        run_snohv2_trainer(trainer, config, report, ps)
    report.events = ps.events
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, ps, finish_report(report, trainer, started)


def stop_depth_report(prune_state):
    """Histogram of stop depths (``"inf"`` for nodes that never stopped)."""
    return stop_histogram(prune_state.masks)
