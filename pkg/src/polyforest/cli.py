"""Command-line entry point: ``polyforest <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .citests import FAMILIES as TESTER_FAMILIES
from .citests import CiTesterSpec, make_tester, run_test
from .graphs import Dag, GraphError, is_polyforest, random_polyforest, read_graph, save_graph, true_cpdag, write_graph
from .learner import learn
from .metrics import evaluate
from .models import (
    BERNOULLI,
    FAMILIES,
    hard_instance,
    random_forest_model,
    read_dataset,
    sample_forest,
    sample_triplet,
    write_dataset,
    write_model,
)

DATA_FAMILIES = ("bernoulli", "gaussian", "nonparam")


def _add_tester_args(p: argparse.ArgumentParser, families) -> None:
    p.add_argument("--family", required=True, choices=families)
    p.add_argument("--c", type=float, default=0.1, help="signal level; threshold tests use c/2 (default 0.1)")
    p.add_argument("--s", type=float, default=1.0, help="smoothness for the nonparametric test (default 1)")
    p.add_argument("--permutations", type=int, default=199)
    p.add_argument("--cutoff", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=1, help="median-trick folds K (odd; 1 disables)")
    p.add_argument("--seed", type=int, default=0, help="permutation seed")


def _spec(args) -> CiTesterSpec:
    return CiTesterSpec(
        args.family, c=args.c, cutoff=args.cutoff, s=args.s,
        permutations=args.permutations, folds=args.folds, seed=args.seed,
    )


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    binary = args.family == BERNOULLI
    if args.triplet:
        model = hard_instance(args.family, args.triplet, args.c, s=args.s, rng_seed=(args.seed, 1))
        data = sample_triplet(model, args.n, rng_seed=(args.seed, 2))
        save_graph(model.graph, out / "graph.txt")
    else:
        graph = random_polyforest(args.d, args.attach_prob, rng_seed=(args.seed, 0))
        model = random_forest_model(args.family, graph, rng_seed=(args.seed, 1), signal=args.signal)
        data = sample_forest(model, args.n, rng_seed=(args.seed, 2))
        save_graph(graph, out / "graph.txt")
        write_model(model, out / "model.txt", out / "graph.txt")
    write_dataset(data, out / "data.csv", binary=binary)
    print(f"wrote {out / 'graph.txt'} and {out / 'data.csv'} ({data.shape[0]} x {data.shape[1]})")
    return 0


def cmd_learn(args) -> int:
    data = read_dataset(args.data, binary=args.family == BERNOULLI)
    result = learn(data, make_tester(_spec(args)), trace=args.trace)
    text = write_graph(result.cpdag)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for edge, first, second in result.conflicts:
        print(f"warning: edge {edge[0]}-{edge[1]} left undirected ({first} vs {second})", file=sys.stderr)
    if args.trace:
        trace_path = Path(args.trace_out or (f"{args.out}.trace.csv" if args.out else "trace.csv"))
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j", "k", "conditioner", "statistic", "decision"])
            for row in result.trace:
                w.writerow([
                    row.j, row.k, "" if row.conditioner is None else row.conditioner,
                    repr(row.statistic), "dependent" if row.dependent else "independent",
                ])
        print(f"trace: {len(result.trace)} CI calls written to {trace_path}", file=sys.stderr)
    return 0


def cmd_test_ci(args) -> int:
    data = read_dataset(args.data)
    if str(args.family).startswith("oracle"):
        raise ValueError("oracle testers need a model and cannot run on a CSV")
    decision = run_test(_spec(args), data)
    label = "dependent" if decision.dependent else "independent"
    print(f"{label} {decision.statistic:.6g} {decision.threshold_or_pvalue:.6g}")
    return 0


def cmd_eval(args) -> int:
    truth, est = read_graph(args.true), read_graph(args.est)
    if isinstance(truth, Dag) and not args.as_is:
        if not is_polyforest(truth):
            raise GraphError("true DAG is not a poly-forest; pass --as-is to compare it literally")
        truth = true_cpdag(truth)
    print(evaluate(truth, est).line())
    return 0


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise harness.ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out


def cmd_experiment(args) -> int:
    overrides = _overrides(args.set)
    if args.out_dir:
        overrides["output_dir"] = args.out_dir
    config = harness.load_config(args.config, overrides)
    workers = harness.resolve_workers(config, args.workers)
    result = harness.run_experiment(config, workers)
    paths = harness.save_experiment(result, config.output_dir)
    print(f"{len(result.records)} records, {len(result.failures)} failed cells -> {paths['records']}")
    if args.plots and result.records:
        for p in harness.emit_plots(harness.aggregate(result.records), config.output_dir):
            print(f"plot: {p}")
    return 0


def cmd_plots(args) -> int:
    rows = harness.read_summary(args.summary)
    out_dir = args.out_dir or str(Path(args.summary).parent)
    for p in harness.emit_plots(rows, out_dir):
        print(f"plot: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyforest", description="Poly-forest structure learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a random poly-forest (or hard triplet) and a dataset")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--attach-prob", type=float, default=0.8)
    p.add_argument("--signal", type=float, default=None, help="calibrated edge strength instead of random ranges")
    p.add_argument("--triplet", choices=("null", "alt"), help="sample a three-variable hard instance instead")
    p.add_argument("--c", type=float, default=0.1, help="signal of the hard instance")
    p.add_argument("--s", type=float, default=1.0, help="smoothness of the nonparametric hard instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", help="estimate a CPDAG from a dataset")
    p.add_argument("--data", required=True)
    _add_tester_args(p, DATA_FAMILIES)
    p.add_argument("--trace", action="store_true", help="test every conditioner and log all decisions")
    p.add_argument("--trace-out", help="trace CSV path (default <out>.trace.csv or trace.csv)")
    p.add_argument("--out", help="CPDAG output file (default stdout)")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("test-ci", help="test column 1 vs column 2, given column 3 if present")
    p.add_argument("--data", required=True)
    _add_tester_args(p, [f for f in TESTER_FAMILIES if not f.startswith("oracle")])
    p.set_defaults(func=cmd_test_ci)

    p = sub.add_parser("eval", help="compare an estimated graph with the truth")
    p.add_argument("--true", required=True, help="true graph; a DAG is converted to its CPDAG")
    p.add_argument("--est", required=True)
    p.add_argument("--as-is", action="store_true", help="compare a true DAG without converting it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a config-driven sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${harness.WORKERS_ENV} or 1)")
    p.add_argument("--out-dir", help="output directory (overrides output_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plots", help="plot SHD/PRR curves from a summary CSV")
    p.add_argument("--summary", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
