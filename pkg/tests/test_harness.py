from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from polyforest.harness import (
    RECORD_FIELDS,
    WORKERS_ENV,
    CellFailure,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    aggregate,
    build_figure,
    emit_plots,
    geometric_grid,
    parse_config,
    read_records,
    read_summary,
    resolve_workers,
    run_cell,
    run_experiment,
    save_experiment,
    scaling_probe,
    write_records,
    write_summary,
)
from polyforest.metrics import prr


def record(shd, exact=None, d=5, n=100, rep=0, family="gaussian"):
    return RunRecord(family, d, n, 0.1, 1.0, rep, rep, shd, shd, shd == 0 if exact is None else exact, 10, 1.0)


class TestConfig:
    def test_parse_flat_file(self):
        cfg = parse_config(
            "# sweep\nfamily = bernoulli\nd_list = 20, 40\nn_list = 300 1000  # two sizes\n"
            "replications = 5\nsignal = none\nrecord_runtime = off\n"
        )
        assert cfg.family == "bernoulli" and cfg.d_list == (20, 40) and cfg.n_list == (300, 1000)
        assert cfg.replications == 5 and cfg.signal is None and cfg.record_runtime is False
        assert cfg.attach_prob == 0.8 and cfg.c == 0.1 and cfg.permutations == 199

    def test_overrides_win(self):
        cfg = parse_config("family = gaussian\nd_list = 3\nn_list = 10\n", {"c": "0.2", "d_list": "4,5"})
        assert cfg.c == 0.2 and cfg.d_list == (4, 5)

    @pytest.mark.parametrize(
        "text",
        [
            "family = gaussian\nd_list = 3\n",
            "family = gaussian\nd_list = 3\nn_list = 10\ncolour = red\n",
            "family = gaussian\nd_list = 3\nn_list = ten\n",
            "family = gaussian\nd_list = 3\nn_list = 10\nreplications = 0\n",
            "family = gaussian\nd_list = 3\nn_list = 10\nfolds = 2\n",
            "family = poisson\nd_list = 3\nn_list = 10\n",
            "family = nonparam\nd_list = 50\nn_list = 100\n",
        ],
    )
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_nonparam_cap_override(self):
        cfg = parse_config("family = nonparam\nd_list = 50\nn_list = 100\nallow_large_d = true\n")
        assert cfg.d_list == (50,)

    def test_worker_precedence(self, monkeypatch):
        cfg = ExperimentConfig("gaussian", (3,), (10,))
        monkeypatch.delenv(WORKERS_ENV, raising=False)
        assert resolve_workers(cfg) == 1
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert resolve_workers(cfg) == 3
        assert resolve_workers(cfg, 2) == 2
        cfg = ExperimentConfig("gaussian", (3,), (10,), parallel_workers=5)
        assert resolve_workers(cfg) == 5 and resolve_workers(cfg, 2) == 2


class TestRunExperiment:
    def test_smoke(self):
        res = run_experiment(ExperimentConfig("gaussian", (3,), (5000,), replications=1), workers=1)
        assert len(res.records) == 1 and not res.failures
        r = res.records[0]
        assert r.shd_skeleton >= 0 and r.ci_calls == 3 * 2

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = ExperimentConfig("bernoulli", (4, 6), (200, 800), replications=3, base_seed=5, record_runtime=False)
        write_records(run_experiment(cfg, 1).records, tmp_path / "a.csv")
        write_records(run_experiment(cfg, 1).records, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_timed_runs_agree_outside_runtime(self):
        cfg = ExperimentConfig("gaussian", (5,), (300,), replications=4, base_seed=2)
        a, b = run_experiment(cfg, 1).records, run_experiment(cfg, 2).records
        strip = lambda rs: [r.row()[:-1] for r in rs]  # noqa: E731
        assert strip(a) == strip(b)

    def test_shd_decreases_with_n(self):
        cfg = ExperimentConfig("gaussian", (20,), (300, 3000), replications=20, base_seed=1)
        rows = {r["n"]: r for r in aggregate(run_experiment(cfg, 1).records)}
        assert rows[3000]["mean_shd_skeleton"] < rows[300]["mean_shd_skeleton"]

    def test_failed_cells_recorded_not_fatal(self, tmp_path):
        # The nonparametric test refuses n < 20, so those cells fail.
        cfg = ExperimentConfig("nonparam", (3,), (10, 200), replications=2, permutations=19)
        res = run_experiment(cfg, 1)
        assert len(res.failures) == 2 and all(isinstance(f, CellFailure) for f in res.failures)
        assert {r.n for r in res.records} == {200}
        assert "20 samples" in res.failures[0].error
        paths = save_experiment(res, tmp_path)
        assert len(paths["failures"].read_text().splitlines()) == 3
        assert [r["n"] for r in read_summary(paths["summary"])] == [200]

    def test_cell_independence(self):
        full = ExperimentConfig("gaussian", (4, 6), (100, 400), replications=2, record_runtime=False)
        part = ExperimentConfig("gaussian", (4,), (400,), replications=2, record_runtime=False)
        kept = {(r.d, r.n, r.rep): r for r in run_experiment(full, 1).records}
        for r in run_experiment(part, 1).records:
            assert kept[(r.d, r.n, r.rep)] == r

    def test_run_cell_matches_sweep(self):
        cfg = ExperimentConfig("bernoulli", (5,), (300,), replications=3, record_runtime=False)
        assert run_experiment(cfg, 1).records[2] == run_cell(cfg, 5, 300, 2)


class TestCsv:
    def test_header(self, tmp_path):
        write_records([record(1)], tmp_path / "r.csv")
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == "family,d,n,c,s,rep,seed,shd_skeleton,shd_cpdag,exact_cpdag,ci_calls,runtime_ms"
        assert tuple(header.split(",")) == RECORD_FIELDS

    def test_round_trip(self, tmp_path):
        recs = [record(0, rep=0), record(3, rep=1)]
        write_records(recs, tmp_path / "r.csv")
        assert read_records(tmp_path / "r.csv") == recs

    def test_summary_round_trip(self, tmp_path):
        rows = aggregate([record(0), record(2, rep=1)])
        write_summary(rows, tmp_path / "s.csv")
        assert read_summary(tmp_path / "s.csv") == rows


class TestAggregate:
    def test_single_record(self):
        (row,) = aggregate([record(4)])
        assert row["mean_shd_skeleton"] == 4 and row["std_shd_skeleton"] == 0.0

    def test_two_records(self):
        (row,) = aggregate([record(0, rep=0), record(2, rep=1)])
        assert row["mean_shd_skeleton"] == 1.0
        assert row["std_shd_skeleton"] == pytest.approx(math.sqrt(2))

    def test_prr_column(self):
        flags = [True, False, True, True]
        recs = [record(0 if f else 1, exact=f, rep=i) for i, f in enumerate(flags)]
        (row,) = aggregate(recs)
        assert row["prr"] == prr(flags) and row["prr_skeleton"] == 0.75

    def test_groups_sorted(self):
        recs = [record(1, d=9, n=50), record(1, d=3, n=500), record(1, d=3, n=100)]
        assert [(r["d"], r["n"]) for r in aggregate(recs)] == [(3, 100), (3, 500), (9, 50)]


class TestScalingProbe:
    cfg = ExperimentConfig("gaussian", (4, 6), (50, 200, 800), replications=3, c=0.2, signal=0.2)

    def test_tau_zero_gives_smallest_n(self):
        assert scaling_probe(self.cfg, 0.0, workers=1) == {4: 50, 6: 50}

    def test_unreachable_marker(self):
        cfg = ExperimentConfig("gaussian", (6,), (5, 8), replications=2, c=0.2, signal=0.2)
        assert scaling_probe(cfg, 1.0, workers=1) == {6: None}

    def test_needs_increasing_grid(self):
        cfg = ExperimentConfig("gaussian", (4,), (200, 50), replications=1)
        with pytest.raises(ValueError):
            scaling_probe(cfg, 0.5)

    def test_geometric_grid(self):
        grid = geometric_grid(100, 1000, 1.5)
        assert grid[0] == 100 and grid[-1] >= 1000 and list(grid) == sorted(set(grid))


class TestPlots:
    def test_single_cell_svg(self, tmp_path):
        (path,) = emit_plots(aggregate([record(2)]), tmp_path)
        assert path.exists() and path.stat().st_size > 0
        ET.parse(path)  # well-formed XML

    def test_series_per_d(self, tmp_path):
        recs = [record(s, d=d, n=n, rep=r) for d in (5, 10, 20) for n in (100, 300) for r, s in enumerate((1, 3))]
        (path,) = emit_plots(aggregate(recs), tmp_path)
        text = path.read_text()
        assert sum(f'id="shd-d{d}"' in text for d in (5, 10, 20)) == 3
        assert sum(f'id="prr-d{d}"' in text for d in (5, 10, 20)) == 3

    def test_axes_cover_data(self):
        recs = [record(s, d=d, n=n, rep=r) for d in (5, 10) for n in (100, 1000)
                for r, s in enumerate((0, n // 50))]
        rows = aggregate(recs)
        ax_shd, ax_prr = build_figure(rows, "gaussian").axes
        lo, hi = ax_shd.get_xlim()
        assert lo <= 100 and hi >= 1000
        lo, hi = ax_shd.get_ylim()
        tops = [r["mean_shd_skeleton"] + r["std_shd_skeleton"] for r in rows]
        assert lo <= min(r["mean_shd_skeleton"] for r in rows) and hi >= max(tops)
        assert ax_prr.get_ylim()[0] <= 0 and ax_prr.get_ylim()[1] >= 1

    def test_one_file_per_family(self, tmp_path):
        rows = aggregate([record(1), record(1, family="bernoulli")])
        assert [p.name for p in emit_plots(rows, tmp_path)] == ["bernoulli.svg", "gaussian.svg"]

    def test_empty_summary(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plots([], tmp_path)

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            emit_plots(aggregate([record(1)]), blocker / "sub")


def test_module_uses_no_global_rng():
    # Drawing from numpy's legacy global state must not affect results.
    cfg = ExperimentConfig("gaussian", (4,), (200,), replications=1, record_runtime=False)
    a = run_cell(cfg, 4, 200, 0)
    np.random.seed(123)
    np.random.random(10)
    assert run_cell(cfg, 4, 200, 0) == a
