"""Comparison pruners: random pruning, DropEdge and adjacency-only UGS."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .graph import LayerMaskSet, apply_mask, edge_sparsity, propagate_zeros
from .snowflake import PruneState, run_snohv2_trainer
from .training import (
    PruneEvent,
    Trainer,
    determinism,
    finish_report,
    new_report,
    stop_histogram,
)


@dataclass
class DropEdgeConfig:
    drop_rate: float = 0.3
    seed: int = 0
    per_layer: bool = False  # resample independently for every layer

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("drop_rate must be in [0, 1]")


@dataclass
class UgsLiteConfig:
    prune_rate: float = 20.0  # percent of surviving edges removed per round
    rounds: int = 5
    epochs_per_round: int = 200
    rewind: str = "ToInit"  # or "None"
    l1: float = 1e-4

    def __post_init__(self):
        if not 0 < self.prune_rate < 100:
            raise ValueError("prune_rate must be in (0, 100)")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        if self.rewind not in ("ToInit", "None"):
            raise ValueError("rewind must be 'ToInit' or 'None'")


def random_prune(masks, rate, seed):
    """Drop ``rate``% of the surviving prunable entries at every layer.

    Each layer draws its own uniform subset; zeros are then propagated
    shallow-to-deep so the result stays depth-monotone. Works in place.
    """
    if not 0 <= rate <= 100:
        raise ValueError("rate must be in [0, 100]")
    rng = np.random.default_rng(seed)
    prunable = ~masks.self_loop
    for l in range(masks.depth):
        live = np.flatnonzero(masks.masks[l] & prunable)
        n = int(round(rate / 100.0 * len(live)))
        if n:
            masks.masks[l, rng.choice(live, size=n, replace=False)] = False
    for l in range(masks.depth - 1):
        propagate_zeros(masks, l)
    return masks


def expected_random_sparsity(rate, depth):
    """Mean per-layer edge sparsity produced by :func:`random_prune` in expectation."""
    keep = 1.0 - rate / 100.0
    return float(np.mean([keep ** (l + 1) for l in range(depth)]))


def rate_for_mean_sparsity(target, depth):
    """Per-layer random rate whose expected mean edge sparsity equals ``target``."""
    lo, hi = 0.0, 100.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_random_sparsity(mid, depth) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dropedge_keep(adj, q, epoch_seed):
    """Boolean keep-vector: each non-self-loop entry survives with prob ``1 - q``."""
    rng = np.random.default_rng(epoch_seed)
    keep = rng.random(adj.num_edges) >= q
    keep[adj.self_loop] = True
    return keep


def dropedge_sample(adj, q, epoch_seed):
    """One epoch's DropEdge view of ``adj``; the input is left untouched."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    return apply_mask(adj, dropedge_keep(adj, q, epoch_seed))


def _dropedge_sampler(adj, cfg):
    def sample(epoch, *layer):
        return dropedge_keep(adj, cfg.drop_rate, [cfg.seed, epoch, *layer])
    return sample


def dropedge_run(graph, config: DropEdgeConfig, model_config, train_config, *, adj=None):
    """Training with a fresh DropEdge sample every epoch; evaluation on the full graph."""
    started = time.perf_counter()
    report = new_report("dropedge", model_config, train_config, {"dropedge": config.__dict__})
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        sample = _dropedge_sampler(trainer.adj, config)
        for _ in range(train_config.epochs):
            trainer.step(sample_keep=_epoch_keep(trainer, sample, config))
            trainer.maybe_log_distances(report)
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, trainer.masks, finish_report(report, trainer, started)


def _epoch_keep(trainer, sample, config):
    if config.drop_rate == 0:
        return None
    epoch = trainer.epoch + 1
    if config.per_layer:
        return np.stack([sample(epoch, l) for l in range(trainer.masks.depth)])
    return sample(epoch)


def dropedge_plus_snohv2(graph, q, snohv2_config, model_config, train_config, *, adj=None,
                         seed=0):
    """SnoHv2 with a per-epoch DropEdge sample ANDed onto its persistent masks.

    Stop probes look at the undropped (but masked) adjacency.
    """
    started = time.perf_counter()
    cfg = DropEdgeConfig(q, seed)
    extra = {"dropedge": cfg.__dict__,
             "snohv2": {**snohv2_config.__dict__,
                        "rho": snohv2_config.resolved_rho(model_config.depth)}}
    report = new_report("dropedge+snohv2", model_config, train_config, extra)
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        ps = PruneState(trainer.masks)
        sampler = _dropedge_sampler(trainer.adj, cfg)
        sample = None if q == 0 else sampler
        run_snohv2_trainer(trainer, snohv2_config, report, ps, sample=sample)
    report.events = ps.events
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, ps, finish_report(report, trainer, started)


def random_prune_run(graph, rate, model_config, train_config, *, adj=None, seed=0):
    """Train on masks from :func:`random_prune`, fixed from the first epoch."""
    started = time.perf_counter()
    report = new_report("random", model_config, train_config, {"random": {"rate": rate,
                                                                          "seed": seed}})
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        random_prune(trainer.masks, rate, seed)
        for _ in range(train_config.epochs):
            trainer.step()
            trainer.maybe_log_distances(report)
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, trainer.masks, finish_report(report, trainer, started)


class _EdgeScore:
    """Trainable real-valued edge mask shared by all layers, with its own Adam."""

    def __init__(self, num_edges, self_loop, lr):
        self.values = np.ones(num_edges)
        self.self_loop = self_loop
        self.lr = lr
        self.m = np.zeros(num_edges)
        self.v = np.zeros(num_edges)
        self.t = 0

    def reset(self):
        self.values[:] = 1.0
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0

    def apply(self, adjs):
        return [a.with_values(a.values * self.values) for a in adjs]

    def update(self, grad, l1):
        g = grad + l1 * np.sign(self.values)
        g[self.self_loop] = 0.0
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * g
        self.v = 0.999 * self.v + 0.001 * g * g
        mhat = self.m / (1 - 0.9 ** self.t)
        vhat = self.v / (1 - 0.999 ** self.t)
        self.values -= self.lr * mhat / (np.sqrt(vhat) + 1e-8)
        self.values[self.self_loop] = 1.0


def ugs_lite_run(graph, config: UgsLiteConfig, model_config, train_config, *, adj=None):
    """Adjacency-only lottery-ticket pruning with one mask shared by every layer.

    Each round trains weights and the edge scores (L1-penalized) for
    ``epochs_per_round`` epochs, removes the ``prune_rate``% surviving edges
    with the smallest score magnitude from all layers at once, and rewinds
    the weights. A final round retrains the rewound weights on the binary
    ticket; best-validation selection only looks at that round.
    """
    started = time.perf_counter()
    report = new_report("ugs_lite", model_config, train_config, {"ugs_lite": config.__dict__})
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj)
        masks: LayerMaskSet = trainer.masks
        score = _EdgeScore(trainer.adj.num_edges, masks.self_loop, train_config.lr)
        base_values = trainer.adj.values
        trainer.transform = score.apply
        events = []
        for r in range(config.rounds):
            for _ in range(config.epochs_per_round):
                _, grads = trainer.step(adj_grads=True)
                # entry = base * score, shared by every layer
                g = np.sum(grads.d_adj, axis=0) * base_values
                score.update(g, config.l1)
                trainer.maybe_log_distances(report)
            live = np.flatnonzero(masks.masks[0] & ~masks.self_loop)
            n = int(round(config.prune_rate / 100.0 * len(live)))
            order = np.lexsort((live, np.abs(score.values[live])))
            removed = live[order[:n]]
            masks.masks[:, removed] = False
            events.append(PruneEvent(trainer.epoch, -1, "edges", n,
                                     f"round {r + 1}, edge sparsity "
                                     f"{edge_sparsity(masks, 0):.4f}"))
            if config.rewind == "ToInit":
                trainer.rewind()
            score.reset()
        trainer.transform = None
        report.selection_start = trainer.epoch + 1
        for _ in range(config.epochs_per_round):
            trainer.step()
            trainer.maybe_log_distances(report)
    report.events = events
    report.stop_histogram = stop_histogram(masks)
    return trainer.state, masks, finish_report(report, trainer, started)
