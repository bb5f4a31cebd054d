"""``ngc`` command line.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
prerequisite), 2 runtime failure. ``NGC_THREADS`` caps worker threads.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import theory
from .graph import GraphError
from .world import SplitPlan, WorldConfig, make_dataset

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

_SIM_CSV = "CSV columns: " + ", ".join(theory.CSV_HEADER)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sim_args(p, classes=True):
    p.add_argument("--p", type=float, required=True, help="single-edge accuracy")
    if classes:
        p.add_argument("--classes", type=int, required=True, help="number of classes C")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="write CSV here instead of stdout")


def _run_args(p):
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--config", help="experiment config JSON (required on first use of a run directory)")
    p.add_argument("--data", help="dataset directory; creates a default config when no config exists")
    p.add_argument("--seed", type=int, default=None, help="master seed for a newly created config")


def build_parser():
    ap = _Parser(prog="ngc", description="Neural graph consensus: simulations and the synthetic-world pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sim-ensemble", help="Monte Carlo of plurality voting over N paths", description=_SIM_CSV)
    _sim_args(p)
    p.add_argument("--paths", type=int, nargs="+", required=True, help="ensemble size(s) N")
    p.add_argument("--hops", type=int, default=2)

    p = sub.add_parser("sim-generations", help="teacher/student generations under the recovery rule",
                       description="CSV columns: generation, student_p, " + ", ".join(theory.CSV_HEADER))
    _sim_args(p)
    p.add_argument("--paths", type=int, nargs="+", required=True, help="N per curve")
    p.add_argument("--generations", type=int, default=10)
    p.add_argument("--recovery", type=float, default=0.2)

    p = sub.add_parser("sim-classes", help="ensemble accuracy against the number of classes", description=_SIM_CSV)
    _sim_args(p, classes=False)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--class-counts", type=int, nargs="+", default=[10, 100, 1000])

    p = sub.add_parser("gen-world", help="write the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=[32, 32], metavar=("H", "W"))
    p.add_argument("--train", type=int, default=800)
    p.add_argument("--validation", type=int, default=200)
    p.add_argument("--unlabeled", type=int, nargs="+", default=[1000, 1000])
    p.add_argument("--evaluation", type=int, default=1000)

    for name, text in [("pretrain", "train every edge on labeled data"),
                       ("build-graph", "greedy ensemble selection on validation data"),
                       ("evaluate", "metrics on the evaluation split")]:
        _run_args(sub.add_parser(name, help=text))
    p = sub.add_parser("iterate", help="one consensus self-training round")
    _run_args(p)
    p.add_argument("--round", type=int, required=True, help="1-based iteration index")
    p = sub.add_parser("run", help="every stage end to end (resumable)")
    _run_args(p)

    p = sub.add_parser("report", help="results table from a run directory or summary JSON")
    p.add_argument("path")
    p.add_argument("--format", choices=["text", "json"], default="text")
    return ap


def _emit(rows, header, output):
    fh = open(output, "w", newline="") if output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])
    finally:
        if output:
            fh.close()


def _experiment(args):
    from .orchestrator import ConfigError, Experiment, ExperimentConfig

    run = Path(args.run)
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif (run / "config.json").exists():
        cfg = ExperimentConfig.load(run / "config.json")
    elif args.data:
        cfg = ExperimentConfig(dataset=str(args.data))
    else:
        raise ConfigError("no config: pass --config or --data for a new run directory")
    if args.seed is not None:
        cfg.seed = args.seed
    if not (Path(cfg.dataset) / "manifest.json").exists():
        raise ConfigError(f"dataset {cfg.dataset} has no manifest.json")
    return Experiment(cfg, run)


def _with_lock(args, fn):
    from filelock import Timeout

    from .orchestrator import run_lock

    try:
        with run_lock(args.run):
            return fn(_experiment(args))
    except Timeout:
        raise RuntimeError(f"run directory {args.run} is locked by another process") from None


def _cmd(args):
    c = args.command
    if c == "sim-ensemble":
        rows = [theory.simulate_ensemble(theory.EnsembleSimConfig(args.p, args.classes, n, args.trials, args.seed, args.hops)).csv_row()
                for n in args.paths]
        _emit(rows, theory.CSV_HEADER, args.output)
    elif c == "sim-generations":
        rows = []
        for n in args.paths:
            steps = theory.simulate_generations(
                theory.GenerationSimConfig(args.p, args.classes, n, args.generations, args.recovery, args.trials, args.seed))
            rows += [[s.generation, s.student_p, *s.teacher.csv_row()] for s in steps]
        _emit(rows, ["generation", "student_p", *theory.CSV_HEADER], args.output)
    elif c == "sim-classes":
        res = theory.sweep_classes(args.p, args.paths, args.class_counts, args.trials, args.seed)
        _emit([r.csv_row() for r in res], theory.CSV_HEADER, args.output)
    elif c == "gen-world":
        cfg = WorldConfig(height=args.size[0], width=args.size[1], seed=args.seed)
        plan = SplitPlan(args.train, args.validation, tuple(args.unlabeled), args.evaluation)
        if (Path(args.out) / "manifest.json").exists():
            raise ValueError(f"{args.out} already holds a dataset")
        make_dataset(cfg, args.out, plan)
        print(f"wrote dataset to {args.out}")
    elif c == "pretrain":
        res = _with_lock(args, lambda e: e.pretrain())
        print(json.dumps(res, indent=1, sort_keys=True))
    elif c == "build-graph":
        res = _with_lock(args, lambda e: e.build_graph())
        for t, sel in sorted(res.items()):
            print(f"{t}: {sel['selected']} of {len(sel['ranked'])} paths")
    elif c == "iterate":
        if args.round < 1:
            raise ValueError("--round must be >= 1")
        rep = _with_lock(args, lambda e: e.iterate(args.round))
        print(json.dumps(rep.to_json(), indent=1, sort_keys=True))
    elif c == "evaluate":
        _with_lock(args, lambda e: e.evaluate())
        from .report import load_summary, render_text

        print(render_text(load_summary(Path(args.run) / "reports" / "summary.json")), end="")
    elif c == "run":
        _with_lock(args, lambda e: e.run())
        print(f"run complete: {args.run}")
    elif c == "report":
        from .report import load_summary, render_json, render_text

        s = load_summary(args.path)
        print(render_json(s) if args.format == "json" else render_text(s), end="" if args.format == "text" else "\n")


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    from .orchestrator import ConfigError
    from .report import ReportError

    try:
        _cmd(args)
    except (ConfigError, GraphError, ReportError, theory.DomainError, ValueError, KeyError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
