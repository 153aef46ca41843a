"""Shared full-batch training loop and run bookkeeping."""

from __future__ import annotations

import contextlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import (
    NumericalError,
    accuracy,
    adam_step,
    backward,
    cosine_distance_per_node,
    forward,
    init_params,
    loss_and_accuracy,
)
from .graph import LayerMaskSet, apply_mask, edge_sparsity, node_sparsity, normalize


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.01
    seed: int = 0
    deterministic: bool = False
    renormalize: bool = False
    distance_every: int = 50  # 0 turns off periodic distance logging

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@contextlib.contextmanager
def determinism(enabled):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float


@dataclass
class PruneEvent:
    epoch: int
    layer: int
    kind: str  # "edges", "nodes" or "warning"
    count: int
    note: str = ""


@dataclass
class RunReport:
    method: str
    epochs: list = field(default_factory=list)
    sparsity: list = field(default_factory=list)  # (layer, node_sparsity, edge_sparsity)
    distances: list = field(default_factory=list)  # (epoch, layer, mean distance)
    stop_histogram: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    selection_start: int = 1  # first epoch eligible for best-val selection

    def best(self):
        """(epoch, val_acc, test_acc) at the best validation epoch.

        Ties go to the earliest epoch.
        """
        eligible = [r for r in self.epochs if r.epoch >= self.selection_start]
        if not eligible:
            return None
        top = max(eligible, key=lambda r: (r.val_acc, -r.epoch))
        return top.epoch, top.val_acc, top.test_acc

    @property
    def test_acc(self):
        best = self.best()
        return float("nan") if best is None else best[2]

    def record_sparsity(self, masks):
        self.sparsity = [(l, node_sparsity(masks, l), edge_sparsity(masks, l))
                         for l in range(masks.depth)]

    def as_dict(self):
        return asdict(self)


def layer_adjacencies(adj, masks, renormalize=False):
    return [apply_mask(adj, masks.masks[l], renormalize=renormalize) for l in range(masks.depth)]


class Trainer:
    """Owns parameters, optimizer moments and masks for one run.

    ``transform`` (if set) rewrites the per-layer adjacencies for both the
    training and the evaluation pass; ``sample_keep`` passed to :meth:`step`
    only affects the training pass of that epoch.
    """

    def __init__(self, graph, model_config, train_config, *, adj=None, masks=None):
        self.graph = graph
        self.model_config = model_config
        self.train_config = train_config
        self.adj = adj if adj is not None else normalize(graph)
        self.masks = masks if masks is not None else LayerMaskSet.full(self.adj, model_config.depth)
        self.state = init_params(model_config)
        self.init_state = self.state.copy()
        self.epoch = 0
        self.transform = None
        self.records = []
        self.dropout_rng = np.random.default_rng([train_config.seed, 7])
        self._cached_masks = None
        self._cached_adjs = None

    def reinitialize(self, seed):
        cfg = self.model_config
        self.state = init_params(type(cfg)(**{**cfg.__dict__, "seed": seed}))

    def rewind(self):
        self.state = self.init_state.copy()

    def layer_adjs(self):
        m = self.masks.masks
        if self._cached_masks is None or not np.array_equal(self._cached_masks, m):
            old = self._cached_adjs
            fresh = []
            for l in range(self.masks.depth):
                if old is not None and np.array_equal(self._cached_masks[l], m[l]):
                    fresh.append(old[l])
                else:
                    fresh.append(apply_mask(self.adj, m[l],
                                            renormalize=self.train_config.renormalize))
            self._cached_adjs = fresh
            self._cached_masks = m.copy()
        adjs = self._cached_adjs
        if self.transform is not None:
            adjs = self.transform(adjs)
        return adjs

    def probe(self):
        """Forward pass with current weights and masks, no dropout or sampling."""
        return forward(self.graph, self.layer_adjs(), self.state, self.model_config)

    def step(self, *, sample_keep=None, adj_grads=False):
        """One epoch: forward, record metrics, backward, Adam update."""
        self.epoch += 1
        g = self.graph
        cfg = self.model_config
        try:
            adjs = self.layer_adjs()
            train_adjs = adjs
            if sample_keep is not None:
                keep = np.asarray(sample_keep)
                if keep.ndim == 1:
                    keep = np.broadcast_to(keep, (len(adjs), keep.shape[0]))
                train_adjs = [apply_mask(a, k) for a, k in zip(adjs, keep)]
            rng = self.dropout_rng if cfg.dropout > 0 else None
            tape = forward(g, train_adjs, self.state, cfg, rng=rng)
            loss, train_acc = loss_and_accuracy(tape, g, "train")
            eval_tape = tape
            if rng is not None or sample_keep is not None:
                eval_tape = forward(g, adjs, self.state, cfg)
            val_acc = accuracy(eval_tape, g, "val") if len(g.val) else float("nan")
            test_acc = accuracy(eval_tape, g, "test") if len(g.test) else float("nan")
            grads = backward(tape, g, train_adjs, self.state, cfg, "train", adj_grads=adj_grads)
            adam_step(self.state, grads, self.train_config.lr)
        except NumericalError as err:
            err.epoch = self.epoch
            raise
        self.records.append(EpochRecord(self.epoch, loss, train_acc, val_acc, test_acc))
        return tape, grads

    def log_distances(self, report, tape=None):
        tape = tape if tape is not None else self.probe()
        for l in range(self.model_config.depth):
            d = cosine_distance_per_node(tape, l)
            report.distances.append((self.epoch, l, float(d.mean())))
        return tape

    def maybe_log_distances(self, report):
        every = self.train_config.distance_every
        if every and self.epoch % every == 0:
            self.log_distances(report)


def new_report(method, model_config, train_config, extra=None):
    config = {"method": method, "model": asdict(model_config), "train": asdict(train_config)}
    if extra:
        config.update(extra)
    return RunReport(method=method, config=config)


def finish_report(report, trainer, started):
    report.epochs = list(trainer.records)
    report.record_sparsity(trainer.masks)
    report.wall_clock = time.perf_counter() - started
    return report


def train_baseline(graph, model_config, train_config, *, adj=None, masks=None, method="none"):
    """Plain training on fixed masks (full masks unless given)."""
    started = time.perf_counter()
    report = new_report(method, model_config, train_config)
    with determinism(train_config.deterministic):
        trainer = Trainer(graph, model_config, train_config, adj=adj, masks=masks)
        for _ in range(train_config.epochs):
            trainer.step()
            trainer.maybe_log_distances(report)
    report.stop_histogram = stop_histogram(trainer.masks)
    return trainer.state, trainer.masks, finish_report(report, trainer, started)


def stop_histogram(masks):
    """Node counts per stop depth; never-stopped nodes go to ``"inf"``."""
    depth = masks.stop_depth
    hist = {}
    finite = depth[np.isfinite(depth)].astype(int)
    for d, c in zip(*np.unique(finite, return_counts=True)):
        hist[int(d)] = int(c)
    never = int(np.count_nonzero(~np.isfinite(depth)))
    if never:
        hist["inf"] = never
    return hist
