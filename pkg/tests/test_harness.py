import csv
import json
import math

import numpy as np
import pytest

from mmx.dynamics import DynamicsState
from mmx.errors import ConfigError, MissingMetricError
from mmx.games import make_bilinear, make_quadratic_example
from mmx.harness import (AGG_HEADER, RAW_HEADER, ExperimentConfig, aggregate, compare_methods,
                         emit_plot_data, load_campaign, run_experiment, trajectory_visual)


def cfg(tmp_path, **kw):
    data = {"game": {"kind": "random_bilinear", "n": 3}, "trials": 2, "max_iters": 300,
            "stop_metric": "gap", "metrics": ["gap"], "out_dir": str(tmp_path), "jobs": 1}
    data.update(kw)
    return ExperimentConfig.from_dict(data)


def raw_without_wall(out_dir):
    out = {}
    for p in sorted((out_dir / "runs").glob("*.csv")):
        out[p.name] = [line.rsplit(",", 1)[0] for line in p.read_text().splitlines()]
    return out


class TestConfig:
    @pytest.mark.parametrize("bad", [
        {"colour": "red"},
        {"method": "adam"},
        {"eta_list": [0.1], "n_list": [3]},
        {"eta": -1.0},
        {"eta_list": []},
        {"trials": 0},
        {"record_stride": 0},
        {"stop_metric": "kl"},
        {"metrics": ["l2"]},
        {"tol": 0.0},
        {"max_iters": -1},
        {"base_seed": -3},
        {"game": {"kind": "quadratic"}, "n_list": [2, 3]},
        {"game": {"kind": "nope"}},
    ])
    def test_rejects(self, tmp_path, bad):
        with pytest.raises(ConfigError):
            cfg(tmp_path, **bad)

    def test_l1_needs_equilibrium(self, tmp_path):
        with pytest.raises(ConfigError):
            cfg(tmp_path, game={"kind": "regularized_bilinear", "A": [[1, 2], [3, 4]], "alpha": 0.1},
                stop_metric="l1", metrics=["l1"])
        cfg(tmp_path, game={"kind": "regularized_bilinear", "A": [[1, 2], [3, 4]], "alpha": 0.1},
            stop_metric="l1", metrics=["l1"], reference={"x": [0.5, 0.5], "y": [0.5, 0.5]})

    def test_missing_game(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"method": "omwu"})

    def test_load_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(p)

    def test_presets_parse(self):
        from pathlib import Path

        for p in sorted((Path(__file__).parent.parent / "configs").glob("*.json")):
            ExperimentConfig.load(p)


class TestRunExperiment:
    def test_layout_and_schema(self, tmp_path):
        res = run_experiment(cfg(tmp_path, metrics=["l1", "kl", "gap"], record_stride=50))
        assert len(res.runs) == 2 and len(res.aggregates) == 1
        with open(tmp_path / "aggregate.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == AGG_HEADER and len(rows) == 2
        for r in res.runs:
            lines = (tmp_path / "runs" / f"{r.run_id}.csv").read_text().splitlines()
            assert tuple(lines[0].split(",")) == RAW_HEADER
            assert all(line.startswith(r.run_id + ",") for line in lines[1:])
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert {m["equilibrium_source"] for m in meta["runs"]} == {"lp"}
        assert all("unique_hint" in m and "degenerate_equilibrium" in m for m in meta["runs"])

    def test_seed_fan_out(self, tmp_path):
        res = run_experiment(cfg(tmp_path, base_seed=40, trials=3))
        assert [r.seed for r in res.runs] == [40, 41, 42]

    def test_max_iters_zero(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "quadratic"}, trials=1, max_iters=0,
                                 stop_metric="l1", metrics=["l1", "kl"]))
        (run,) = res.runs
        assert run.terminated_by == "max_iters" and run.rows == []
        text = (tmp_path / "runs" / f"{run.run_id}.csv").read_text()
        assert text.splitlines() == [",".join(RAW_HEADER)]

    def test_reproducible(self, tmp_path):
        run_experiment(cfg(tmp_path / "a", trials=3, metrics=["l1", "gap"]))
        run_experiment(cfg(tmp_path / "b", trials=3, metrics=["l1", "gap"]))
        assert raw_without_wall(tmp_path / "a") == raw_without_wall(tmp_path / "b")

    def test_jobs_independent(self, tmp_path):
        a = run_experiment(cfg(tmp_path / "a", trials=4, n_list=[2, 3], jobs=1))
        b = run_experiment(cfg(tmp_path / "b", trials=4, n_list=[2, 3], jobs=3))
        assert raw_without_wall(tmp_path / "a") == raw_without_wall(tmp_path / "b")
        assert a.aggregates == b.aggregates

    def test_aggregates_recomputable(self, tmp_path):
        res = run_experiment(cfg(tmp_path, eta_list=[0.1, 1.0], trials=3, max_iters=2000))
        loaded = load_campaign(tmp_path)
        assert len(loaded.aggregates) == len(res.aggregates) == 2
        for a, b in zip(res.aggregates, loaded.aggregates):
            for f in ("mean_iters", "std_iters", "final_metric_mean", "final_metric_std",
                      "converged_fraction"):
                assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-12)
        with open(tmp_path / "aggregate.csv") as fh:
            disk = list(csv.DictReader(fh))
        for a, row in zip(res.aggregates, disk):
            assert float(row["mean_iters"]) == pytest.approx(a.mean_iters, abs=1e-12)
            assert float(row["final_metric_std"]) == pytest.approx(a.final_metric_std, abs=1e-12)

    def test_aggregate_statistics(self, tmp_path):
        res = run_experiment(cfg(tmp_path, trials=4, max_iters=5000, tol=1e-3))
        iters = [r.final_iter for r in res.runs]
        (agg,) = res.aggregates
        assert agg.mean_iters == pytest.approx(np.mean(iters))
        assert agg.std_iters == pytest.approx(np.std(iters))  # population std
        finals = [r.rows[-1][3] for r in res.runs]
        assert agg.converged_fraction == pytest.approx(np.mean([f <= 1e-3 for f in finals]))

    def test_non_unique_downgrades(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "bilinear", "A": [[0.0, 0.0], [0.0, 0.0]]},
                                 trials=1, stop_metric="l1", metrics=["l1", "kl"]))
        (run,) = res.runs
        assert run.unique_hint is False and run.stop_metric == "gap" and run.note
        assert run.rows[0][1] is None and run.rows[0][3] == 0.0
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert "non-unique" in meta["runs"][0]["note"]

    def test_numerical_failure_continues(self, tmp_path):
        big = 1e308
        res = run_experiment(cfg(tmp_path, game={"kind": "bilinear", "A": [[big, -big], [-big, big]]},
                                 trials=2, eta=10.0))
        assert all(r.terminated_by == "numerical_failure" for r in res.runs)
        assert all(r.failure for r in res.runs)
        assert (tmp_path / "aggregate.csv").exists()

    def test_quadratic_flags_degenerate(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "quadratic"}, trials=1, stop_metric="l1",
                                 metrics=["l1", "kl"], max_iters=100))
        assert res.runs[0].degenerate is True and res.runs[0].equilibrium_source == "known"

    def test_supplied_reference(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "bilinear", "A": [[1, -1], [-1, 1]]},
                                 reference={"x": [0.5, 0.5], "y": [0.5, 0.5]}, stop_metric="l1",
                                 metrics=["l1"], trials=1, eta=0.3, max_iters=20_000))
        assert res.runs[0].equilibrium_source == "supplied"
        assert res.runs[0].terminated_by == "tol_reached"

    def test_quadratic_lr_sweep_reaches_small_kl(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "quadratic"}, eta_list=[1.0, 10.0],
                                 trials=3, stop_metric="l1", metrics=["l1", "kl"], tol=1e-4,
                                 max_iters=20_000, record_stride=1000))
        for r in res.runs:
            assert r.terminated_by == "tol_reached" and r.rows[-1][2] < 1e-4

    def test_size_sweep_trend(self, tmp_path):
        from scipy.stats import spearmanr

        res = run_experiment(cfg(tmp_path, n_list=[3, 6, 12], trials=6, eta=1.0, max_iters=50_000,
                                 record_stride=10_000))
        assert spearmanr([a.n for a in res.aggregates], [a.mean_iters for a in res.aggregates])[0] > 0


class TestCompare:
    def test_paired_inits(self, tmp_path):
        res = compare_methods(cfg(tmp_path, metrics=["gap"], max_iters=50, record_stride=100))
        om = [r for r in res.runs if r.point.method == "omwu"]
        og = [r for r in res.runs if r.point.method == "ogda"]
        assert [r.seed for r in om] == [r.seed for r in og]
        # same init: identical gap at iteration 0
        assert [r.rows[0][3] for r in om] == [r.rows[0][3] for r in og]

    def test_single_method_matches_run(self, tmp_path):
        a = compare_methods(cfg(tmp_path / "a"), methods=["omwu"])
        b = run_experiment(cfg(tmp_path / "b"))
        assert a.aggregates == b.aggregates
        assert raw_without_wall(tmp_path / "a") == raw_without_wall(tmp_path / "b")

    def test_small_step_both_progress(self, tmp_path):
        res = compare_methods(cfg(tmp_path, game={"kind": "random_bilinear", "n": 4}, eta=0.001,
                                  max_iters=3000, record_stride=1000, trials=2))
        for r in res.runs:
            gaps = [row[3] for row in r.rows]
            assert r.terminated_by == "max_iters"
            assert gaps[-1] < gaps[0]


class TestPlotData:
    def test_iters_vs_n(self, tmp_path):
        res = run_experiment(cfg(tmp_path, n_list=[2, 3, 4]))
        path = emit_plot_data(res, "iters_vs_n", svg_out=True)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["n", "mean_iters", "std_iters"] and len(rows) == 4
        assert (tmp_path / "iters_vs_n.svg").read_text().startswith("<svg")

    def test_kl_no_resampling(self, tmp_path):
        res = run_experiment(cfg(tmp_path, game={"kind": "quadratic"}, eta_list=[0.5, 5.0], trials=1,
                                 stop_metric="l1", metrics=["kl", "l1"], record_stride=7,
                                 max_iters=30))
        path = emit_plot_data(res, "kl_vs_iters", svg_out=True)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        for r in res.runs:
            mine = [int(row["iter"]) for row in rows if row["run_id"] == r.run_id]
            assert mine == [row[0] for row in r.rows]
            assert set(mine) - {r.final_iter} <= {0, 7, 14, 21, 28}

    def test_missing_metric(self, tmp_path):
        res = run_experiment(cfg(tmp_path))
        with pytest.raises(MissingMetricError, match=res.runs[0].run_id):
            emit_plot_data(res, "kl_vs_iters")

    def test_failure_flag(self, tmp_path):
        big = 1e308
        res = run_experiment(cfg(tmp_path, game={"kind": "bilinear", "A": [[big, -big], [-big, big]]},
                                 trials=1, eta=10.0, stop_metric="l1", metrics=["l1"]))
        path = emit_plot_data(res, "error_vs_iters")
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(row["failed"] == "1" for row in rows)
        assert len(rows) == len(res.runs[0].rows)

    def test_method_compare(self, tmp_path):
        res = compare_methods(cfg(tmp_path, eta_list=[0.1, 1.0]))
        path = emit_plot_data(res, "method_compare", svg_out=True)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert {(r["method"], float(r["eta"])) for r in rows} == {
            (m, e) for m in ("omwu", "ogda") for e in (0.1, 1.0)}

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_plot_data(run_experiment(cfg(tmp_path)), "pie")


class TestTrajectoryVisual:
    def test_quadratic(self, tmp_path):
        init = DynamicsState.start([0.5, 0.5], [0.3, 0.7])
        paths = trajectory_visual(make_quadratic_example(), "omwu", [0.1, 10.0], init, tmp_path)
        assert np.abs(paths[0.1][-1]).max() <= 1e-3
        assert len(paths[10.0]) < len(paths[0.1])
        assert (tmp_path / "trajectory_eta0.1.csv").exists()
        svg = (tmp_path / "trajectories.svg").read_text()
        assert "marker-end" in svg and svg.count("<g ") == 2

    def test_stays_near_equilibrium(self, tmp_path):
        init = DynamicsState.start([1e-6, 1 - 1e-6], [1e-6, 1 - 1e-6])
        paths = trajectory_visual(make_quadratic_example(), "omwu", [0.1], init, tmp_path,
                                  max_iters=2000, ball=1e-12)
        pts = paths[0.1]
        assert np.abs(pts).max() <= 1e-3

    def test_needs_two_by_two(self, tmp_path):
        with pytest.raises(ConfigError):
            trajectory_visual(make_bilinear(np.ones((3, 2))), "omwu", [0.1],
                              DynamicsState.start(np.ones(3) / 3, [0.5, 0.5]), tmp_path)


def test_aggregate_empty_rows():
    from mmx.harness import Point, RunRecord

    r = RunRecord("k_t0", Point("omwu", 2, 1.0), 0, 0, [], "max_iters", None, "l1", "known", None, True)
    (agg,) = aggregate([r], 1e-5)
    assert agg.mean_iters == 0.0 and math.isnan(agg.final_metric_mean)
