import numpy as np
import pytest
from conftest import make_graph, path_edges, random_edges

from snowflake_gnn.engine import ModelConfig, forward, init_params
from snowflake_gnn.graph import LayerMaskSet, normalize
from snowflake_gnn.snowflake import (
    PruneState,
    SnoHv1Config,
    SnoHv2Config,
    default_rho,
    snohv1_prune_layer,
    snohv1_run,
    snohv2_evaluate_stops,
    snohv2_prune,
    snohv2_run,
    stop_depth_report,
)
from snowflake_gnn.training import TrainConfig, layer_adjacencies, train_baseline


def small_graph(n=12, seed=0, p=0.35, **kw):
    rng = np.random.default_rng(seed)
    edges = np.concatenate([random_edges(rng, n, p), np.array(path_edges(n))])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return make_graph(n, edges, seed=seed, **kw)


def model(g, depth, variant="GCN", seed=0):
    return ModelConfig(variant, depth, g.num_features, 3, hidden_dim=8, seed=seed)


class TestPruneLayer:
    def path_masks(self, depth=1):
        # 3-node path: four non-self-loop entries
        return LayerMaskSet.full(normalize(make_graph(3, path_edges(3), split=False)), depth)

    def test_smallest_half_removed(self):
        m = self.path_masks()
        off = np.flatnonzero(~m.self_loop)
        g = np.zeros(m.masks.shape[1])
        g[off] = [0.9, 0.5, 0.1, 0.05]
        _, removed = snohv1_prune_layer(g, m, 0, 50)
        assert sorted(removed) == sorted(off[[2, 3]])

    def test_floor_to_zero(self):
        m = self.path_masks()
        _, removed = snohv1_prune_layer(np.zeros(m.masks.shape[1]), m, 0, 20)  # 0.8 -> 0
        assert len(removed) == 0 and m.masks.all()

    def test_ties_by_edge_index(self):
        g = make_graph(5, path_edges(5), split=False)  # 8 non-self-loop entries
        m = LayerMaskSet.full(normalize(g), 1)
        _, removed = snohv1_prune_layer(np.ones(m.masks.shape[1]), m, 0, 25)
        assert list(removed) == list(np.flatnonzero(~m.self_loop)[:2])

    def test_propagates_to_deeper(self):
        m = self.path_masks(depth=3)
        g = np.arange(m.masks.shape[1], dtype=float)
        _, removed = snohv1_prune_layer(g, m, 1, 50)
        assert not m.masks[1:, removed].any() and m.masks[0, removed].all()
        m.check_invariants()

    def test_empty_candidates_warn(self):
        m = self.path_masks()
        m.masks[0] = m.self_loop
        with pytest.warns(UserWarning, match="no prunable"):
            _, removed = snohv1_prune_layer(np.zeros(m.masks.shape[1]), m, 0, 50)
        assert len(removed) == 0


def edge_events(ps):
    return [(e.epoch, e.layer) for e in ps.events if e.kind == "edges"]


class TestSnoHv1Run:
    def test_depth_one_single_event(self):
        g = small_graph()
        _, ps, _ = snohv1_run(g, SnoHv1Config(window=5), model(g, 1), TrainConfig(epochs=20))
        assert len(edge_events(ps)) == 1

    def test_tiny_rate_keeps_masks_full(self):
        g = small_graph()
        tc = TrainConfig(epochs=30, deterministic=True)
        _, ps, rep = snohv1_run(g, SnoHv1Config(prune_rate=1e-6, window=5), model(g, 3), tc)
        assert ps.masks.masks.all()
        _, _, base = train_baseline(g, model(g, 3), tc)
        assert [r.val_acc for r in rep.epochs] == [r.val_acc for r in base.epochs]

    def test_one_shot_schedule(self):
        g = small_graph()
        _, ps, rep = snohv1_run(g, SnoHv1Config(window=2), model(g, 3), TrainConfig(epochs=10))
        assert edge_events(ps) == [(2, 2), (4, 1), (6, 0)]
        assert len(rep.epochs) == 10
        ps.masks.check_invariants()

    def test_total_epochs_cover_schedule(self):
        g = small_graph()
        _, ps, rep = snohv1_run(g, SnoHv1Config(window=4), model(g, 3), TrainConfig(epochs=5))
        assert len(edge_events(ps)) == 3 and len(rep.epochs) == 12

    def test_iterative_single_round_matches_one_shot(self):
        g = small_graph()
        tc = TrainConfig(epochs=12, deterministic=True)
        a = snohv1_run(g, SnoHv1Config(window=3), model(g, 3), tc)[1]
        b = snohv1_run(g, SnoHv1Config(window=3, scheme="Iterative", iterative_rounds=1),
                       model(g, 3), tc)[1]
        assert [e.__dict__ for e in a.events] == [e.__dict__ for e in b.events]
        assert np.array_equal(a.masks.masks, b.masks.masks)

    def test_iterative_splits_removal(self):
        g = small_graph(n=14, p=0.5)
        cfg = SnoHv1Config(prune_rate=30, window=6, scheme="Iterative", iterative_rounds=3)
        _, ps, _ = snohv1_run(g, cfg, model(g, 2), TrainConfig(epochs=12))
        ev = [e for e in ps.events if e.kind == "edges"]
        assert [e.epoch for e in ev] == [2, 4, 6, 8, 10, 12]
        live = int((~ps.masks.self_loop).sum())
        assert sum(e.count for e in ev[:3]) == int(np.floor(0.3 * live))

    def test_reinit_schedule(self):
        g = small_graph()
        cfg = SnoHv1Config(window=3, scheme="Reinit", reinit_epochs=4)
        _, ps, rep = snohv1_run(g, cfg, model(g, 3), TrainConfig(epochs=1))
        assert edge_events(ps) == [(3, 2), (7, 1), (11, 0)]
        assert len(rep.epochs) == 15 and rep.selection_start == 12
        assert rep.best()[0] >= 12

    def test_removal_counts_accumulate(self):
        g = small_graph(n=14, p=0.5)
        _, ps, rep = snohv1_run(g, SnoHv1Config(window=2), model(g, 3), TrainConfig(epochs=6))
        es = [e for _, _, e in rep.sparsity]
        assert es == sorted(es, reverse=True)
        total = int((~ps.masks.self_loop).sum())
        own = {e.layer: e.count for e in ps.events if e.kind == "edges"}
        for l in range(3):
            removed = total - int((ps.masks.masks[l] & ~ps.masks.self_loop).sum())
            assert removed >= own[l]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SnoHv1Config(prune_rate=0)
        with pytest.raises(ValueError):
            SnoHv1Config(scheme="Sometimes")


def synthetic_tape(distances):
    """Tape whose per-layer cosine distances are ``distances[l][i]``."""
    distances = np.asarray(distances, float)
    depth, n = distances.shape
    g = make_graph(n, path_edges(n), split=False)
    cfg = ModelConfig("GCN", depth, g.num_features, 2, hidden_dim=2)
    adj = normalize(g)
    tape = forward(g, layer_adjacencies(adj, LayerMaskSet.full(adj, depth)), init_params(cfg),
                   cfg)
    theta = np.arccos(1.0 - distances)
    tape.Z = [np.tile([1.0, 0.0], (n, 1)) for _ in range(depth)]
    tape.T = [np.stack([np.cos(theta[l]), np.sin(theta[l])], axis=1) for l in range(depth)]
    return tape, LayerMaskSet.full(adj, depth)


class TestEvaluateStops:
    def test_identical_features_stop_at_two(self):
        g = make_graph(6, path_edges(6), features=np.ones((6, 3)), split=False)
        cfg = ModelConfig("GCN", 4, 3, 2, hidden_dim=4)
        adj = normalize(g)
        masks = LayerMaskSet.full(adj, 4)
        tape = forward(g, layer_adjacencies(adj, masks), init_params(cfg), cfg)
        stops = snohv2_evaluate_stops(tape, masks, SnoHv2Config(rho=0.05))
        assert stops == [(i, 2) for i in range(6)]

    def test_zero_rho_never_stops(self):
        tape, masks = synthetic_tape([[0.0, 0.0], [0.0, 0.0]])
        assert snohv2_evaluate_stops(tape, masks, SnoHv2Config(rho=0.0)) == []

    def test_first_layer_below_threshold(self):
        tape, masks = synthetic_tape([[0.5, 0.2], [0.3, 0.01], [0.04, 0.3]])
        stops = snohv2_evaluate_stops(tape, masks, SnoHv2Config(rho=0.05))
        assert stops == [(0, 3), (1, 2)]

    def test_relative_mode(self):
        tape, masks = synthetic_tape([[0.5, 0.5], [0.06, 0.04], [0.01, 0.3]])
        cfg = SnoHv2Config(threshold_mode="relative", relative_p=10)
        assert snohv2_evaluate_stops(tape, masks, cfg) == [(0, 3), (1, 2)]

    def test_stopped_nodes_skipped(self):
        tape, masks = synthetic_tape([[0.5, 0.5], [0.01, 0.01]])
        masks.stop_depth[1] = 2
        assert snohv2_evaluate_stops(tape, masks, SnoHv2Config(rho=0.05)) == [(0, 2)]

    def test_default_rho(self):
        assert [default_rho(d) for d in (8, 16, 32)] == [0.2, 0.1, 0.05]


class TestSnoHv2Prune:
    def masks(self, depth=5):
        return LayerMaskSet.full(normalize(small_graph()), depth)

    def row(self, m, node):
        return (m.rows == node) & ~m.self_loop

    def test_deepest_only(self):
        m = self.masks()
        snohv2_prune(m, [(3, 5)])
        assert not m.masks[4, self.row(m, 3)].any()
        assert m.masks[:4].all()

    def test_from_layer_two_down(self):
        m = self.masks()
        snohv2_prune(m, [(3, 2)])
        assert m.masks[0].all()
        assert not m.masks[1:, self.row(m, 3)].any()
        assert m.masks[:, m.self_loop].all()
        assert m.stop_depth[3] == 2
        m.check_invariants()

    def test_restop_ignored_with_note(self):
        m = self.masks()
        events = []
        snohv2_prune(m, [(3, 2)], events=events)
        before = m.masks.copy()
        snohv2_prune(m, [(3, 4)], events=events)
        assert np.array_equal(m.masks, before) and m.stop_depth[3] == 2
        assert events[-1].kind == "warning" and "already stopped" in events[-1].note


class TestSnoHv2Run:
    def test_zero_rho_equals_baseline(self):
        g = small_graph()
        tc = TrainConfig(epochs=40, deterministic=True)
        cfg = SnoHv2Config(rho=0.0, check_every=5, warmup=5)
        _, ps, rep = snohv2_run(g, cfg, model(g, 4), tc)
        _, _, base = train_baseline(g, model(g, 4), tc)
        assert ps.masks.masks.all()
        assert [r.__dict__ for r in rep.epochs] == [r.__dict__ for r in base.epochs]
        assert stop_depth_report(ps) == {"inf": g.num_nodes}

    def test_huge_rho_stops_everyone_at_two(self):
        g = small_graph()
        cfg = SnoHv2Config(rho=2.5, check_every=5, warmup=10)
        _, ps, rep = snohv2_run(g, cfg, model(g, 4), TrainConfig(epochs=20))
        assert stop_depth_report(ps) == {2: g.num_nodes}
        nodes = [e for e in ps.events if e.kind == "nodes"]
        assert [(e.epoch, e.layer, e.count) for e in nodes] == [(10, 1, g.num_nodes)]
        assert [s for _, _, s in rep.sparsity][1:] == [0.0, 0.0, 0.0]

    def test_histogram_sums_to_nodes(self):
        g = small_graph(n=20, seed=3)
        _, ps, _ = snohv2_run(g, SnoHv2Config(rho=0.3, check_every=5, warmup=5), model(g, 6),
                              TrainConfig(epochs=30))
        assert sum(stop_depth_report(ps).values()) == 20
        ps.masks.check_invariants()

    def test_probe_schedule(self):
        cfg = SnoHv2Config(check_every=30, warmup=50)
        assert [e for e in range(1, 200) if cfg.is_probe_epoch(e)] == [50, 80, 110, 140, 170]

    def test_larger_rho_stops_no_later(self):
        g = small_graph(n=20, seed=5)
        first = {}
        for rho in (0.05, 0.2, 0.6):
            cfg = SnoHv2Config(rho=rho, check_every=100, warmup=15)
            _, ps, _ = snohv2_run(g, cfg, model(g, 5), TrainConfig(epochs=15, deterministic=True))
            first[rho] = ps.masks.stop_depth
        assert np.all(first[0.2] <= first[0.05]) and np.all(first[0.6] <= first[0.2])

    def test_prune_state_defaults(self):
        ps = PruneState(LayerMaskSet.full(normalize(small_graph()), 2))
        assert ps.events == [] and ps.next_layer_to_prune is None
