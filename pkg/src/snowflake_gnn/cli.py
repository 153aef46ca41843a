"""Command-line entry point: ``train``, ``sweep``, ``gradcheck`` and ``homophily``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .datasets import DatasetError, load_dataset
from .engine import NumericalError
from .experiment import ConfigError, build_config, execute, parse_assignments, read_config_file
from .gradcheck import STEP, run_gradcheck
from .graph import homophily_ratio
from .report import summarize, write_run, write_sweep

OUT_ENV = "SNOWFLAKE_GNN_OUT"

EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_NUMERIC = 4


def _common(p):
    p.add_argument("--config", metavar="PATH", help="key=value file (or an echoed config JSON)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="pin BLAS to one thread for bit-identical reruns")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default under ${OUT_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(prog="snowflake-gnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one configuration")
    _common(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="run one configuration over several seeds")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-nodes", type=int, default=12)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--step", type=float, default=STEP)
    p.add_argument("--batch-norm", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("homophily", help="print the homophily ratio of a dataset")
    p.add_argument("dataset")
    return parser


def _resolve_config(args, seed=None):
    file_values = read_config_file(args.config) if args.config else {}
    overrides = parse_assignments(args.overrides)
    if seed is not None:
        overrides["seed"] = seed
    if args.deterministic:
        overrides["deterministic"] = True
    if args.out:
        overrides["out"] = args.out
    return build_config(file_values, overrides)


def _default_out(cfg, tag=None):
    root = Path(os.environ.get(OUT_ENV, "runs"))
    name = Path(cfg.dataset).name if cfg.dataset else "run"
    return root / f"{name}-{cfg.method}-{cfg.variant}{cfg.depth}-{tag or f'seed{cfg.seed}'}"


def _derived(cfg, report):
    derived = {}
    if cfg.method == "random":
        derived["random_rate"] = cfg.random_rate()
    if "snohv2" in report.config:
        derived["rho"] = report.config["snohv2"]["rho"]
    return derived


def run_one(cfg, out_dir):
    """Execute ``cfg`` and write its files to ``out_dir``. Returns the summary."""
    report, _ = execute(cfg)
    write_run(out_dir, report, cfg.as_dict(), _derived(cfg, report))
    return summarize(report)


def _guarded(fn):
    """Map the error classes to exit codes, with the message on stderr."""
    try:
        return fn()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as err:
        print(f"dataset error: {err}", file=sys.stderr)
        return EXIT_DATASET
    except NumericalError as err:
        print(f"numerical abort at layer {err.layer}, epoch {err.epoch}: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def cmd_train(args):
    def go():
        cfg = _resolve_config(args, args.seed)
        out = Path(cfg.out) if cfg.out else _default_out(cfg)
        summary = run_one(cfg, out)
        print(f"best epoch {summary['best_epoch']}: val {summary['val_acc']:.4f} "
              f"test {summary['test_acc']:.4f} -> {out}")
        return 0
    return _guarded(go)


def _sweep_child(cfg, out_dir):
    try:
        return run_one(cfg, out_dir), None
    except (ConfigError, DatasetError, NumericalError) as err:
        return None, f"{type(err).__name__}: {err}"


def cmd_sweep(args):
    def go():
        base = _resolve_config(args)
        root = Path(base.out) if base.out else _default_out(base, "sweep")
        jobs = []
        for i, seed in enumerate(args.seeds):
            cfg = build_config(base.as_dict(), {"seed": seed})
            jobs.append((f"{i:02d}_seed{seed}", seed, cfg, root / f"{i:02d}_seed{seed}"))
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_sweep_child, cfg, out) for _, _, cfg, out in jobs]
                outcomes = [f.result() for f in futures]
        else:
            outcomes = [_sweep_child(cfg, out) for _, _, cfg, out in jobs]
        results = []
        failed = 0
        for (name, seed, _, _), (summary, error) in zip(jobs, outcomes):
            if error:
                failed += 1
                print(f"{name}: failed ({error})", file=sys.stderr)
            results.append((name, seed, summary))
        root.mkdir(parents=True, exist_ok=True)
        agg = write_sweep(root / "sweep.csv", results)
        if agg:
            mean, std = agg["test_acc"]
            print(f"test acc {mean:.4f} +- {std:.4f} over {len(results) - failed} seed(s) "
                  f"-> {root / 'sweep.csv'}")
        return EXIT_FAIL if failed else 0
    return _guarded(go)


def cmd_gradcheck(args):
    if args.trials == 0:
        print("warning: gradcheck ran zero instances; passing vacuously", file=sys.stderr)
        return 0
    if args.trials < 0 or args.tolerance < 0:
        print("config error: trials and tolerance must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    result = run_gradcheck(args.trials, args.tolerance, max_nodes=args.max_nodes,
                           max_depth=args.max_depth, seed=args.seed, step=args.step,
                           batch_norm=args.batch_norm)
    print(f"{'variant':<8} {'target':<7} {'checked':>8} {'max_rel_err':>12}  status")
    for variant, kind, count, err, ok in result.rows():
        print(f"{variant:<8} {kind:<7} {count:>8} {err:>12.3e}  {'pass' if ok else 'FAIL'}")
    print(f"{args.trials} instances, {result.skipped_kinks} targets skipped at ReLU kinks, "
          f"tolerance {args.tolerance:g}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else EXIT_FAIL


def cmd_homophily(args):
    def go():
        bundle = load_dataset(args.dataset)
        print(f"{homophily_ratio(bundle.graph):.4f}")
        return 0
    return _guarded(go)


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
            "homophily": cmd_homophily}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
