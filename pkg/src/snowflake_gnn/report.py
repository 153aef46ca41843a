"""CSV/JSON emission of run reports and sweep summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

REPORT_FILES = ("report.csv", "sparsity.csv", "distances.csv", "stops.csv", "config.echo.json")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def summarize(report):
    best = report.best()
    es = [e for _, _, e in report.sparsity]
    ns = [n for _, n, _ in report.sparsity]
    return {
        "best_epoch": None if best is None else best[0],
        "val_acc": None if best is None else best[1],
        "test_acc": None if best is None else best[2],
        "mean_edge_sparsity": float(np.mean(es)) if es else None,
        "mean_node_sparsity": float(np.mean(ns)) if ns else None,
        "wall_clock": report.wall_clock,
        "stopped_nodes": sum(c for d, c in report.stop_histogram.items() if d != "inf"),
    }


def write_run(out_dir, report, run_config, derived=None):
    """Write the five per-run files. Layers and stop depths are 1-based."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "report.csv", ["epoch", "train_loss", "train_acc", "val_acc", "test_acc"],
               [(r.epoch, _num(r.train_loss), _num(r.train_acc), _num(r.val_acc),
                 _num(r.test_acc)) for r in report.epochs])
    _write_csv(out / "sparsity.csv", ["layer", "node_sparsity", "edge_sparsity"],
               [(l + 1, _num(n), _num(e)) for l, n, e in report.sparsity])
    _write_csv(out / "distances.csv", ["epoch", "layer", "mean_distance"],
               [(ep, l + 1, _num(d)) for ep, l, d in report.distances])
    hist = report.stop_histogram
    depths = sorted(k for k in hist if k != "inf") + (["inf"] if "inf" in hist else [])
    _write_csv(out / "stops.csv", ["depth", "count"], [(d, hist[d]) for d in depths])
    echo = {
        "config": run_config,
        "derived": derived or {},
        "resolved": report.config,
        "events": [_event(e) for e in report.events],
        "result": summarize(report),
    }
    (out / "config.echo.json").write_text(json.dumps(echo, indent=2, sort_keys=True,
                                                     default=_json_default) + "\n")
    return out


def _event(e):
    # layer -1 marks an event that hit every layer at once
    return {**e.__dict__, "layer": e.layer + 1 if e.layer >= 0 else "all"}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


SWEEP_HEADER = ["run", "seed", "status", "best_epoch", "val_acc", "test_acc", "test_acc_std",
                "edge_sparsity", "edge_sparsity_std", "node_sparsity", "node_sparsity_std"]


def write_sweep(path, results):
    """Per-seed rows plus one ``aggregate`` row (mean, population std) over successes.

    ``results`` is a list of ``(run_name, seed, summary_or_None)``.
    """
    rows = []
    ok = []
    for name, seed, summary in results:
        if summary is None:
            rows.append([name, seed, "failed"] + [""] * (len(SWEEP_HEADER) - 3))
            continue
        ok.append(summary)
        rows.append([name, seed, "ok", summary["best_epoch"], _num(summary["val_acc"]),
                     _num(summary["test_acc"]), "", _num(summary["mean_edge_sparsity"]), "",
                     _num(summary["mean_node_sparsity"]), ""])
    agg = None
    if ok:
        def stat(key):
            vals = np.array([s[key] for s in ok], dtype=float)
            return float(vals.mean()), float(vals.std())
        agg = {key: stat(key) for key in ("val_acc", "test_acc", "mean_edge_sparsity",
                                          "mean_node_sparsity")}
        rows.append(["aggregate", "", f"{len(ok)}/{len(results)}", "",
                     _num(agg["val_acc"][0]), _num(agg["test_acc"][0]),
                     _num(agg["test_acc"][1]), _num(agg["mean_edge_sparsity"][0]),
                     _num(agg["mean_edge_sparsity"][1]), _num(agg["mean_node_sparsity"][0]),
                     _num(agg["mean_node_sparsity"][1])])
    _write_csv(path, SWEEP_HEADER, rows)
    return agg
