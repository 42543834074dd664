"""Experiment runner: seeded sweeps over (d, n) grids, aggregation, plots.

Each cell ``(d, n, rep)`` draws a random poly-forest, a random SEM over it and
a dataset, learns a CPDAG and scores it against the truth.  The cell's seed is
``derive_seed(base_seed, d, n, rep)``, so any cell can be rerun on its own and
results do not depend on the worker count or completion order.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
import time
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .citests import CiTesterSpec, make_tester
from .graphs import random_polyforest, true_cpdag
from .learner import learn
from .metrics import evaluate, prr
from .models import FAMILIES, NONPARAM, random_forest_model, sample_forest
from .rng import derive_seed

WORKERS_ENV = "POLYFOREST_WORKERS"
RECORD_FIELDS = (
    "family", "d", "n", "c", "s", "rep", "seed",
    "shd_skeleton", "shd_cpdag", "exact_cpdag", "ci_calls", "runtime_ms",
)
FAILURE_FIELDS = ("family", "d", "n", "rep", "seed", "error")
SUMMARY_FIELDS = (
    "family", "d", "n", "replications",
    "mean_shd_skeleton", "std_shd_skeleton", "mean_shd_cpdag", "std_shd_cpdag",
    "prr", "prr_skeleton", "mean_ci_calls", "mean_runtime_ms",
)
NOT_REACHED = None


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    d_list: tuple[int, ...]
    n_list: tuple[int, ...]
    replications: int = 20
    attach_prob: float = 0.8
    c: float = 0.1
    s: float = 1.0
    permutations: int = 199
    folds: int = 1
    cutoff: float = 0.05
    signal: float | None = None
    scan: str = "full"
    base_seed: int = 0
    parallel_workers: int | None = None
    record_runtime: bool = True
    max_nonparam_d: int = 40
    allow_large_d: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.d_list or not self.n_list:
            raise ConfigError("d_list and n_list must be non-empty")
        if min(self.d_list) < 2:
            raise ConfigError("every d must be at least 2")
        if min(self.n_list) < 1:
            raise ConfigError("every n must be positive")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0.0 <= self.attach_prob <= 1.0:
            raise ConfigError("attach_prob must lie in [0, 1]")
        if self.scan not in ("full", "early"):
            raise ConfigError("scan must be 'full' or 'early'")
        if self.family == NONPARAM and max(self.d_list) > self.max_nonparam_d and not self.allow_large_d:
            raise ConfigError(
                f"nonparametric sweeps are capped at d={self.max_nonparam_d}; "
                "set allow_large_d = true to override"
            )
        self.tester_spec(0)  # validate tester parameters early

    def tester_spec(self, seed: int) -> CiTesterSpec:
        try:
            return CiTesterSpec(
                self.family, c=self.c, cutoff=self.cutoff, s=self.s,
                permutations=self.permutations, folds=self.folds, seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_LIST_KEYS = {"d_list", "n_list"}
_BOOL_KEYS = {"record_runtime", "allow_large_d"}
_SECTION = "experiment"


def _coerce(key: str, value: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    value = value.strip()
    try:
        if key in _LIST_KEYS:
            return tuple(int(v) for v in value.replace(",", " ").split())
        if key in _BOOL_KEYS:
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(f"not a boolean: {value!r}")
            return lowered in ("true", "1", "yes", "on")
        if key in ("signal", "parallel_workers") and value.lower() in ("", "none"):
            return None
        kind = types[key]
        if "int" in kind and "float" not in kind:
            return int(value)
        if "float" in kind:
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` comments) plus string overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = dict(parser[_SECTION])
    raw.update(overrides or {})
    values = {k: _coerce(k, v) for k, v in raw.items()}
    missing = [k for k in ("family", "d_list", "n_list") if k not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    return ExperimentConfig(**values)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides)


def resolve_workers(config: ExperimentConfig, cli_workers: int | None = None) -> int:
    """CLI flag, then the config file, then the environment variable, then 1."""
    for value in (cli_workers, config.parallel_workers, os.environ.get(WORKERS_ENV)):
        if value not in (None, ""):
            workers = int(value)
            if workers < 1:
                raise ConfigError("worker count must be positive")
            return workers
    return 1


# --------------------------------------------------------------------------
# Cells
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    family: str
    d: int
    n: int
    c: float
    s: float
    rep: int
    seed: int
    shd_skeleton: int
    shd_cpdag: int
    exact_cpdag: bool
    ci_calls: int
    runtime_ms: float

    def row(self) -> list:
        return [
            self.family, self.d, self.n, repr(self.c), repr(self.s), self.rep, self.seed,
            self.shd_skeleton, self.shd_cpdag, int(self.exact_cpdag), self.ci_calls,
            f"{self.runtime_ms:.3f}",
        ]


@dataclass(frozen=True)
class CellFailure:
    family: str
    d: int
    n: int
    rep: int
    seed: int
    error: str


@dataclass
class ExperimentResult:
    records: list[RunRecord] = field(default_factory=list)
    failures: list[CellFailure] = field(default_factory=list)


def cell_seed(config: ExperimentConfig, d: int, n: int, rep: int) -> int:
    return derive_seed(config.base_seed, d, n, rep)


def run_cell(config: ExperimentConfig, d: int, n: int, rep: int) -> RunRecord | CellFailure:
    """One replication; exceptions become a :class:`CellFailure`."""
    seed = cell_seed(config, d, n, rep)
    start = time.perf_counter()
    try:
        graph = random_polyforest(d, config.attach_prob, rng_seed=(seed, 0))
        model = random_forest_model(config.family, graph, rng_seed=(seed, 1), signal=config.signal)
        data = sample_forest(model, n, rng_seed=(seed, 2))
        tester = make_tester(config.tester_spec(derive_seed(seed, 3)))
        result = learn(data, tester, full_scan=config.scan == "full")
        report = evaluate(true_cpdag(graph), result.cpdag)
    except Exception as exc:  # a failed cell must not abort the sweep
        detail = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return CellFailure(config.family, d, n, rep, seed, detail)
    elapsed = (time.perf_counter() - start) * 1000.0 if config.record_runtime else 0.0
    return RunRecord(
        config.family, d, n, config.c, config.s, rep, seed,
        report.shd_skeleton, report.shd_cpdag, report.exact_cpdag, result.ci_calls, elapsed,
    )


def _run_cell_args(args):
    return run_cell(*args)


def run_cells(config: ExperimentConfig, cells, workers: int = 1) -> ExperimentResult:
    cells = sorted(cells)
    jobs = [(config, d, n, rep) for d, n, rep in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_args, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [run_cell(*job) for job in jobs]
    result = ExperimentResult()
    for outcome in outcomes:
        (result.failures if isinstance(outcome, CellFailure) else result.records).append(outcome)
    return result


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Run every ``(d, n, rep)`` cell of the grid; records come back sorted."""
    cells = [(d, n, rep) for d in config.d_list for n in config.n_list for rep in range(config.replications)]
    return run_cells(config, cells, resolve_workers(config, workers))


# --------------------------------------------------------------------------
# Aggregation and I/O
# --------------------------------------------------------------------------


def _std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate(records: list[RunRecord]) -> list[dict]:
    """Per ``(family, d, n)``: mean and sample std of both SHDs, PRR, costs."""
    groups: dict[tuple, list[RunRecord]] = defaultdict(list)
    for r in records:
        groups[(r.family, r.d, r.n)].append(r)
    rows = []
    for (family, d, n), recs in sorted(groups.items()):
        skel = [r.shd_skeleton for r in recs]
        cp = [r.shd_cpdag for r in recs]
        rows.append({
            "family": family, "d": d, "n": n, "replications": len(recs),
            "mean_shd_skeleton": float(np.mean(skel)), "std_shd_skeleton": _std(skel),
            "mean_shd_cpdag": float(np.mean(cp)), "std_shd_cpdag": _std(cp),
            "prr": prr(r.exact_cpdag for r in recs),
            "prr_skeleton": prr(r.shd_skeleton == 0 for r in recs),
            "mean_ci_calls": float(np.mean([r.ci_calls for r in recs])),
            "mean_runtime_ms": float(np.mean([r.runtime_ms for r in recs])),
        })
    return rows


def write_records(records: list[RunRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in sorted(records, key=lambda r: (r.family, r.d, r.n, r.rep)):
            w.writerow(r.row())


def read_records(path: str | Path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            RunRecord(
                row["family"], int(row["d"]), int(row["n"]), float(row["c"]), float(row["s"]),
                int(row["rep"]), int(row["seed"]), int(row["shd_skeleton"]), int(row["shd_cpdag"]),
                row["exact_cpdag"] == "1", int(row["ci_calls"]), float(row["runtime_ms"]),
            )
            for row in reader
        ]


def write_failures(failures: list[CellFailure], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAILURE_FIELDS)
        for f in sorted(failures, key=lambda f: (f.family, f.d, f.n, f.rep)):
            w.writerow([f.family, f.d, f.n, f.rep, f.seed, f.error])


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_summary(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])


def read_summary(path: str | Path) -> list[dict]:
    ints = {"d", "n", "replications"}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SUMMARY_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: summary is missing columns {sorted(missing)}")
        return [
            {k: (v if k == "family" else int(v) if k in ints else float(v)) for k, v in row.items()}
            for row in reader
        ]


def save_experiment(result: ExperimentResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / "records.csv", "failures": out / "failures.csv", "summary": out / "summary.csv"}
    write_records(result.records, paths["records"])
    write_failures(result.failures, paths["failures"])
    write_summary(aggregate(result.records) if result.records else [], paths["summary"])
    return paths


# --------------------------------------------------------------------------
# Sample-size scaling
# --------------------------------------------------------------------------


def scaling_probe(
    config: ExperimentConfig, tau: float, workers: int | None = None
) -> dict[int, int | None]:
    """For each ``d``, the smallest ``n`` in the (sorted) grid with PRR >= ``tau``.

    The grid is scanned upward and stops at the first hit, which is by
    definition the smallest qualifying ``n``.  ``None`` marks "not reached".
    Failed cells count as failed recoveries.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    n_grid = sorted(config.n_list)
    if list(config.n_list) != n_grid:
        raise ValueError("scaling_probe needs an increasing n grid")
    w = resolve_workers(config, workers)
    out: dict[int, int | None] = {}
    for d in config.d_list:
        out[d] = NOT_REACHED
        for n in n_grid:
            res = run_cells(config, [(d, n, rep) for rep in range(config.replications)], w)
            flags = [r.exact_cpdag for r in res.records] + [False] * len(res.failures)
            if prr(flags) >= tau:
                out[d] = n
                break
    return out


def geometric_grid(lo: int, hi: int, ratio: float) -> tuple[int, ...]:
    """Increasing integers from ``lo`` to at least ``hi`` with step ratio ``ratio``."""
    if lo < 1 or hi < lo or ratio <= 1.0:
        raise ValueError("need 1 <= lo <= hi and ratio > 1")
    steps = math.ceil(math.log(hi / lo) / math.log(ratio))
    return tuple(sorted({int(round(lo * ratio**i)) for i in range(steps + 1)}))


# --------------------------------------------------------------------------
# Plots
# --------------------------------------------------------------------------


def build_figure(rows: list[dict], family: str):
    """SHD and PRR against n, one line per d, with std error bars on SHD."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib.figure import Figure

    rows = [r for r in rows if r["family"] == family]
    if not rows:
        raise ValueError(f"no summary rows for family {family!r}")
    by_d: dict[int, list[dict]] = defaultdict(list)
    for r in rows:
        by_d[r["d"]].append(r)
    fig = Figure(figsize=(10, 4))
    ax_shd, ax_prr = fig.subplots(1, 2)
    for d, series in sorted(by_d.items()):
        series = sorted(series, key=lambda r: r["n"])
        n = [r["n"] for r in series]
        container = ax_shd.errorbar(
            n, [r["mean_shd_skeleton"] for r in series], yerr=[r["std_shd_skeleton"] for r in series],
            marker="o", capsize=3, label=f"d={d}",
        )
        container.lines[0].set_gid(f"shd-d{d}")
        (line,) = ax_prr.plot(n, [r["prr"] for r in series], marker="o", label=f"d={d}")
        line.set_gid(f"prr-d{d}")
    ax_shd.set(xlabel="sample size n", ylabel="skeleton SHD", title=f"{family}: SHD")
    ax_prr.set(xlabel="sample size n", ylabel="PRR", title=f"{family}: precise recovery", ylim=(-0.05, 1.05))
    for ax in (ax_shd, ax_prr):
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def emit_plots(rows: list[dict], out_dir: str | Path) -> list[Path]:
    """Write ``<family>.svg`` for every family present in ``rows``."""
    if not rows:
        raise ValueError("empty summary")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for family in sorted({r["family"] for r in rows}):
        path = out / f"{family}.svg"
        build_figure(rows, family).savefig(path, format="svg")
        paths.append(path)
    return paths


__all__ = [
    "CellFailure", "ConfigError", "ExperimentConfig", "ExperimentResult", "RECORD_FIELDS",
    "RunRecord", "SUMMARY_FIELDS", "WORKERS_ENV", "aggregate", "build_figure", "cell_seed",
    "emit_plots", "geometric_grid", "load_config", "parse_config", "read_records", "read_summary",
    "resolve_workers", "run_cell", "run_cells", "run_experiment", "save_experiment",
    "scaling_probe", "write_failures", "write_records", "write_summary",
]
