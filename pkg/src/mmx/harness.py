"""Experiment campaigns: size sweeps, step-size sweeps, method comparisons.

A campaign expands an ``ExperimentConfig`` into configuration points
(method x size x step size) and runs ``trials`` independent trials per point.
Trial ``t`` uses seed ``base_seed + t`` for both the random game (size sweeps)
and the initial point, so paired methods share games and inits.

Output layout in ``out_dir``::

    runs/<run_id>.csv     run_id,iter,l1,kl,gap,wall_time_s
    aggregate.csv         one row per configuration point
    metadata.json         per-run termination, equilibrium source, flags
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import svg
from .dynamics import (METHODS, METRICS, DynamicsState, StopRule, Termination, Trajectory,
                       _fmt, run)
from .equilibrium import KktVerdict, check_kkt, solve_bilinear
from .errors import ConfigError, MissingMetricError, SolverFailure
from .games import dirichlet_point, game_from_spec

RAW_HEADER = ("run_id", "iter", "l1", "kl", "gap", "wall_time_s")
AGG_HEADER = ("config_key", "n", "eta", "method", "mean_iters", "std_iters",
              "final_metric_mean", "final_metric_std", "converged_fraction")
INIT_FLOOR = 1e-12
STOP_METRICS = ("l1", "gap")


@dataclass
class ExperimentConfig:
    game: dict
    method: str = "omwu"
    methods: list[str] | None = None
    eta: float = 1.0
    eta_list: list[float] | None = None
    n_list: list[int] | None = None
    trials: int = 10
    base_seed: int = 0
    max_iters: int = 200_000
    tol: float = 1e-5
    stop_metric: str = "l1"
    metrics: list[str] = field(default_factory=lambda: ["l1"])
    record_stride: int = 1
    out_dir: str = "results"
    jobs: int | None = None
    reference: dict | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "game" not in data:
            raise ConfigError("config needs a 'game' entry")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    @property
    def method_list(self) -> list[str]:
        return list(self.methods) if self.methods else [self.method]

    def validate(self) -> None:
        for m in self.method_list:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.eta_list is not None and self.n_list is not None:
            raise ConfigError("a campaign sweeps either eta_list or n_list, not both")
        etas = self.eta_list if self.eta_list is not None else [self.eta]
        if not etas or any(not (e > 0 and math.isfinite(e)) for e in etas):
            raise ConfigError(f"step sizes must be positive, got {etas}")
        if self.n_list is not None:
            if self.game.get("kind") != "random_bilinear":
                raise ConfigError("n_list sweeps need game kind 'random_bilinear'")
            if not self.n_list or any(int(n) < 1 for n in self.n_list):
                raise ConfigError(f"sizes must be positive, got {self.n_list}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.stop_metric not in STOP_METRICS:
            raise ConfigError(f"unknown stop metric {self.stop_metric!r}")
        if any(m not in METRICS for m in self.metrics):
            raise ConfigError(f"unknown metric in {self.metrics}")
        if self.base_seed < 0 or self.base_seed + self.trials >= 2**64:
            raise ConfigError("seeds must fit in 64 unsigned bits")
        try:
            game = game_from_spec(self._game_spec(self.n_list[0] if self.n_list else None, 0))
        except ValueError as exc:
            raise ConfigError(f"invalid game: {exc}") from exc
        wants_reference = self.stop_metric in ("l1", "kl") or any(m in ("l1", "kl") for m in self.metrics)
        if wants_reference and not (game.kind in ("bilinear", "random_bilinear")
                                    or game.known_equilibrium is not None
                                    or self.reference is not None):
            raise ConfigError("l1/kl metrics need an equilibrium: use a bilinear game or "
                              "supply 'reference'")

    def _game_spec(self, n, seed):
        spec = dict(self.game)
        if spec.get("kind") == "random_bilinear":
            if n is not None:
                spec["n"] = spec["m"] = int(n)
            spec["seed"] = int(spec.get("seed", 0)) + seed
        return spec


@dataclass(frozen=True)
class Point:
    method: str
    n: int
    eta: float

    @property
    def key(self) -> str:
        return f"{self.method}_n{self.n}_eta{self.eta:g}"


@dataclass
class RunRecord:
    run_id: str
    point: Point
    trial: int
    seed: int
    rows: list[tuple]
    terminated_by: str
    failure: str | None
    stop_metric: str
    equilibrium_source: str
    unique_hint: bool | None
    degenerate: bool | None
    note: str | None = None

    @property
    def final_iter(self) -> int:
        return int(self.rows[-1][0]) if self.rows else 0

    def final_metric(self) -> float | None:
        if not self.rows:
            return None
        return self.rows[-1][1 + METRICS.index(self.stop_metric)]


@dataclass
class AggregateRow:
    config_key: str
    n: int
    eta: float
    method: str
    mean_iters: float
    std_iters: float
    final_metric_mean: float
    final_metric_std: float
    converged_fraction: float


@dataclass
class CampaignResult:
    runs: list[RunRecord]
    aggregates: list[AggregateRow]
    metadata: dict
    out_dir: Path | None = None

    def runs_for(self, key: str) -> list[RunRecord]:
        return [r for r in self.runs if r.point.key == key]


def _points(cfg: ExperimentConfig, game_n: int) -> list[Point]:
    etas = cfg.eta_list if cfg.eta_list is not None else [cfg.eta]
    sizes = cfg.n_list if cfg.n_list is not None else [game_n]
    return [Point(m, int(n), float(e)) for m in cfg.method_list for n in sizes for e in etas]


def _reference(cfg: ExperimentConfig, game):
    """Equilibrium, its source, unique_hint and degeneracy flag."""
    if cfg.reference is not None:
        ref = (np.asarray(cfg.reference["x"], float), np.asarray(cfg.reference["y"], float))
        source = "supplied"
        unique = None
    elif game.payoff is not None and game.is_bilinear:
        try:
            sol = solve_bilinear(game.payoff)
        except SolverFailure as exc:
            return None, f"lp_failed: {exc}", None, None
        ref, source, unique = (sol.x, sol.y), "lp", sol.unique_hint
    elif game.known_equilibrium is not None:
        ref, source, unique = game.known_equilibrium, "known", None
    else:
        return None, "none", None, None
    degenerate = check_kkt(game, *ref).verdict is KktVerdict.PASS_DEGENERATE
    return ref, source, unique, degenerate


def _run_one(cfg: ExperimentConfig, point: Point, trial: int, runs_dir: str | None) -> RunRecord:
    seed = cfg.base_seed + trial
    game = game_from_spec(cfg._game_spec(point.n if cfg.n_list else None, seed))
    ref, source, unique, degenerate = _reference(cfg, game)

    stop_metric, metrics, note = cfg.stop_metric, list(cfg.metrics), None
    if unique is False:
        note = "equilibrium may be non-unique; l1/kl replaced by duality gap"
        stop_metric = "gap"
        metrics = [m for m in metrics if m == "gap"] or ["gap"]
        ref = None
    elif ref is None and (stop_metric != "gap" or any(m != "gap" for m in metrics)):
        # The LP failed: run on the duality gap rather than abort the campaign.
        note = f"no reference equilibrium ({source}); l1/kl replaced by duality gap"
        stop_metric = "gap"
        metrics = [m for m in metrics if m == "gap"] or ["gap"]
    if stop_metric not in metrics:
        metrics.append(stop_metric)
    metrics = [m for m in METRICS if m in metrics]

    # Independent stream from the game's: jump the PCG64 state once.
    init_rng = np.random.Generator(np.random.PCG64(seed).jumped())
    x0 = dirichlet_point(game.dim_x, init_rng, floor=INIT_FLOOR)
    y0 = dirichlet_point(game.dim_y, init_rng, floor=INIT_FLOOR)
    traj: Trajectory = run(game, point.method, point.eta, DynamicsState.start(x0, y0),
                           StopRule(cfg.tol, stop_metric, cfg.max_iters), reference=ref,
                           metrics=tuple(metrics), stride=cfg.record_stride)
    run_id = f"{point.key}_t{trial}"
    rows = [(r.iter, r.l1_error, r.kl, r.duality_gap, r.wall_time_s) for r in traj.metrics]
    rec = RunRecord(run_id, point, trial, seed, rows, traj.terminated_by.value, traj.failure,
                    stop_metric, source, unique, degenerate, note)
    if runs_dir is not None:
        write_raw_csv(rec, Path(runs_dir) / f"{run_id}.csv")
    return rec


def write_raw_csv(rec: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RAW_HEADER)
        for it, l1, kl, gap, wall in rec.rows:
            w.writerow([rec.run_id, it, _fmt(l1), _fmt(kl), _fmt(gap), f"{wall:.6f}"])


def aggregate(runs: list[RunRecord], tol: float) -> list[AggregateRow]:
    """Per-point mean/std (population) of iterations and final stop metric.

    A run counts as converged when its final stop metric is at or below
    ``tol``. Runs without rows contribute 0 iterations and no metric.
    """
    out = []
    keys = list(dict.fromkeys(r.point.key for r in runs))
    for key in keys:
        group = sorted((r for r in runs if r.point.key == key), key=lambda r: r.trial)
        p = group[0].point
        iters = np.array([r.final_iter for r in group], dtype=float)
        finals = np.array([v for r in group if (v := r.final_metric()) is not None], dtype=float)
        converged = np.mean([(v := r.final_metric()) is not None and v <= tol for r in group])
        # Diverged metrics near the float limit may overflow to inf; that is the honest summary.
        with np.errstate(over="ignore", invalid="ignore"):
            out.append(AggregateRow(
                key, p.n, p.eta, p.method, float(iters.mean()), float(iters.std()),
                float(finals.mean()) if finals.size else math.nan,
                float(finals.std()) if finals.size else math.nan,
                float(converged)))
    return out


def write_aggregate_csv(rows: list[AggregateRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGG_HEADER)
        for r in rows:
            w.writerow([r.config_key, r.n, repr(r.eta), r.method, repr(r.mean_iters),
                        repr(r.std_iters), repr(r.final_metric_mean), repr(r.final_metric_std),
                        repr(r.converged_fraction)])


def _metadata(cfg: ExperimentConfig, runs: list[RunRecord]) -> dict:
    return {
        "config": asdict(cfg),
        "runs": [
            {
                "run_id": r.run_id, "config_key": r.point.key, "method": r.point.method,
                "n": r.point.n, "eta": r.point.eta, "trial": r.trial, "seed": r.seed,
                "terminated_by": r.terminated_by, "failure": r.failure,
                "stop_metric": r.stop_metric, "equilibrium_source": r.equilibrium_source,
                "unique_hint": r.unique_hint, "degenerate_equilibrium": r.degenerate,
                "note": r.note,
            }
            for r in runs
        ],
    }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> CampaignResult:
    """Run every (point, trial) of the campaign and aggregate.

    Trials run in a process pool of ``cfg.jobs`` workers (default: all cores);
    results are ordered by (point, trial) before aggregation so output does
    not depend on scheduling.
    """
    cfg.validate()
    probe = game_from_spec(cfg._game_spec(cfg.n_list[0] if cfg.n_list else None, 0))
    points = _points(cfg, probe.dim_x)
    out_dir = Path(cfg.out_dir) if write else None
    runs_dir = None
    if out_dir is not None:
        (out_dir / "runs").mkdir(parents=True, exist_ok=True)
        runs_dir = str(out_dir / "runs")

    tasks = [(p, t) for p in points for t in range(cfg.trials)]
    jobs = cfg.jobs or os.cpu_count() or 1
    if jobs == 1 or len(tasks) == 1:
        runs = [_run_one(cfg, p, t, runs_dir) for p, t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, cfg, p, t, runs_dir) for p, t in tasks]
            runs = [f.result() for f in futures]
    order = {p: i for i, p in enumerate(points)}
    runs.sort(key=lambda r: (order[r.point], r.trial))

    aggregates = aggregate(runs, cfg.tol)
    metadata = _metadata(cfg, runs)
    if out_dir is not None:
        write_aggregate_csv(aggregates, out_dir / "aggregate.csv")
        with open(out_dir / "metadata.json", "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True)
    return CampaignResult(runs, aggregates, metadata, out_dir)


def compare_methods(cfg: ExperimentConfig, methods=("omwu", "ogda"), write: bool = True) -> CampaignResult:
    """Paired runs of several methods with identical per-trial games and inits."""
    data = asdict(cfg)
    data["methods"] = list(methods)
    return run_experiment(ExperimentConfig.from_dict(data), write=write)


def _parse_float(s: str):
    return float(s) if s != "" else None


def load_campaign(out_dir) -> CampaignResult:
    """Rebuild a ``CampaignResult`` from the raw CSVs and metadata on disk.

    Aggregates are recomputed from the raw rows, never read back.
    """
    out_dir = Path(out_dir)
    with open(out_dir / "metadata.json") as fh:
        meta = json.load(fh)
    cfg = ExperimentConfig.from_dict(meta["config"])
    runs = []
    for info in meta["runs"]:
        method, n, eta = info["method"], int(info["n"]), float(info["eta"])
        rows = []
        with open(out_dir / "runs" / f"{info['run_id']}.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((int(rec["iter"]), _parse_float(rec["l1"]), _parse_float(rec["kl"]),
                             _parse_float(rec["gap"]), float(rec["wall_time_s"])))
        runs.append(RunRecord(info["run_id"], Point(method, n, eta), info["trial"], info["seed"],
                              rows, info["terminated_by"], info["failure"], info["stop_metric"],
                              info["equilibrium_source"], info["unique_hint"],
                              info["degenerate_equilibrium"], info.get("note")))
    return CampaignResult(runs, aggregate(runs, cfg.tol), meta, out_dir)


# -- plot data --------------------------------------------------------------

PLOT_KINDS = ("iters_vs_n", "error_vs_iters", "kl_vs_iters", "method_compare")


def emit_plot_data(result: CampaignResult, kind: str, out_dir=None, svg_out: bool = False) -> Path:
    """Write the tidy CSV for one figure kind (and optionally an SVG); return the CSV path.

    Columns:
      iters_vs_n      n,mean_iters,std_iters
      error_vs_iters  run_id,config_key,iter,l1,failed
      kl_vs_iters     run_id,eta,iter,kl
      method_compare  method,eta,converged_fraction,mean_iters,std_iters,mean_wall_time_s
    """
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    out_dir = Path(out_dir or result.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{kind}.csv"

    if kind == "iters_vs_n":
        by_n: dict[int, list[int]] = {}
        for r in result.runs:
            by_n.setdefault(r.point.n, []).append(r.final_iter)
        header = ("n", "mean_iters", "std_iters")
        rows = [(n, repr(float(np.mean(v))), repr(float(np.std(v)))) for n, v in sorted(by_n.items())]
        series = {"mean iterations": [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]}
        log_y = False
    elif kind == "error_vs_iters":
        header = ("run_id", "config_key", "iter", "l1", "failed")
        rows, series = [], {}
        for r in result.runs:
            failed = int(r.terminated_by == Termination.NUMERICAL_FAILURE.value)
            pts = []
            for it, l1, *_ in r.rows:
                if l1 is None:
                    raise MissingMetricError(f"run {r.run_id} has no l1 metric")
                rows.append((r.run_id, r.point.key, it, repr(l1), failed))
                pts.append((it, l1))
            series[r.run_id] = pts
        log_y = True
    elif kind == "kl_vs_iters":
        header = ("run_id", "eta", "iter", "kl")
        rows, series = [], {}
        for r in result.runs:
            pts = []
            for it, _, kl, *_ in r.rows:
                if kl is None:
                    raise MissingMetricError(f"run {r.run_id} has no kl metric")
                rows.append((r.run_id, repr(r.point.eta), it, repr(kl)))
                pts.append((it, kl))
            series[r.run_id] = pts
        log_y = True
    else:
        header = ("method", "eta", "converged_fraction", "mean_iters", "std_iters", "mean_wall_time_s")
        rows = []
        for a in result.aggregates:
            walls = [r.rows[-1][4] for r in result.runs_for(a.config_key) if r.rows]
            rows.append((a.method, repr(a.eta), repr(a.converged_fraction), repr(a.mean_iters),
                         repr(a.std_iters), f"{np.mean(walls) if walls else 0.0:.6f}"))
        series = {}
        for a in result.aggregates:
            series.setdefault(a.method, []).append((a.eta, a.mean_iters))
        log_y = False

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    if svg_out:
        svg.write_line_plot(out_dir / f"{kind}.svg", series, title=kind, log_y=log_y)
    return path


def trajectory_visual(game, method: str, eta_list, init: DynamicsState, out_dir,
                      max_iters: int = 200_000, ball: float = 1e-3, reference=None) -> dict:
    """Trace (x1, y1) for each step size on a 2x2 game.

    Each run stops once the l1 distance to the equilibrium is within ``ball``
    (or at ``max_iters``). Writes ``trajectory_eta<eta>.csv`` per step size
    and ``trajectories.svg``. Returns {eta: array of (x1, y1) rows}.
    """
    if game.dim_x != 2 or game.dim_y != 2:
        raise ConfigError(f"trajectory plots need a 2x2 game, got {game.dim_x}x{game.dim_y}")
    reference = reference if reference is not None else game.known_equilibrium
    if reference is None and game.payoff is not None and game.is_bilinear:
        sol = solve_bilinear(game.payoff)
        reference = (sol.x, sol.y)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for eta in eta_list:
        traj = run(game, method, eta, init, StopRule(ball, "l1" if reference is not None else "gap",
                                                     max_iters),
                   reference=reference, keep_states=True)
        pts = np.array([[s.x[0], s.y[0]] for s in traj.states])
        with open(out_dir / f"trajectory_eta{eta:g}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iter", "x1", "y1"))
            for m, (a, b) in zip(traj.metrics, pts):
                w.writerow((m.iter, repr(float(a)), repr(float(b))))
        paths[eta] = pts
    svg.write_trajectories(out_dir / "trajectories.svg",
                           {f"eta={eta:g}": p for eta, p in paths.items()})
    return paths
