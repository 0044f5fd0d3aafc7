"""Command-line entry point ``mmx``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure in every
trial, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import harness
from .dynamics import METHODS, DynamicsState, Termination
from .equilibrium import check_kkt, solve_bilinear
from .errors import ConfigError, InvalidEquilibriumError, MissingMetricError
from .games import GAME_KINDS, game_from_spec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _game_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("game")
    g.add_argument("--game", help=f"game kind {GAME_KINDS} or path to a game JSON file")
    g.add_argument("--matrix", help="payoff CSV for bilinear / regularized_bilinear")
    g.add_argument("--n", type=int, help="rows for random_bilinear")
    g.add_argument("--m", type=int, help="columns for random_bilinear (default n)")
    g.add_argument("--game-seed", type=int, help="payoff seed for random_bilinear")
    g.add_argument("--alpha", type=float, help="regularization for regularized_bilinear")


def _game_spec(args) -> dict:
    if args.game is None:
        raise ConfigError("--game is required without --config")
    if args.game not in GAME_KINDS:
        path = Path(args.game)
        if not path.is_file():
            raise ConfigError(f"--game: {args.game!r} is neither a known kind nor a file")
        with open(path) as fh:
            spec = json.load(fh)
        if isinstance(spec.get("A"), str) and not Path(spec["A"]).is_absolute():
            spec["A"] = str(path.parent / spec["A"])
        return spec
    spec = {"kind": args.game}
    if args.matrix is not None:
        spec["A"] = args.matrix
    for key, val in (("n", args.n), ("m", args.m), ("seed", args.game_seed), ("alpha", args.alpha)):
        if val is not None:
            spec[key] = val
    return spec


def _campaign_args(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    p.add_argument("--config", help="JSON experiment config (other flags override it)")
    _game_args(p)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--eta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t")
    p.add_argument("--metrics", type=_names, help="comma list from l1,kl,gap")
    p.add_argument("--stop-metric", choices=harness.STOP_METRICS)
    p.add_argument("--stride", type=int, help="record metrics every k iterations")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    if sweep:
        p.add_argument("--eta-list", type=_floats, help="comma list of step sizes")
        p.add_argument("--n-list", type=_ints, help="comma list of sizes (random_bilinear)")


def _config(args, **overrides) -> harness.ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if isinstance(data.get("game"), dict) and isinstance(data["game"].get("A"), str):
            a = Path(data["game"]["A"])
            if not a.is_absolute():
                data["game"]["A"] = str(Path(args.config).parent / a)
    else:
        data = {"game": _game_spec(args)}
    if args.config and args.game is not None:
        data["game"] = _game_spec(args)
    flag_map = {
        "method": "method", "eta": "eta", "tol": "tol", "max_iters": "max_iters",
        "trials": "trials", "seed": "base_seed", "metrics": "metrics",
        "stop_metric": "stop_metric", "stride": "record_stride", "out": "out_dir",
        "jobs": "jobs", "eta_list": "eta_list", "n_list": "n_list",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    data.update({k: v for k, v in overrides.items() if v is not None})
    return harness.ExperimentConfig.from_dict(data)


def _summarize(result: harness.CampaignResult) -> int:
    for a in result.aggregates:
        print(f"{a.config_key}: mean_iters={a.mean_iters:.1f} std={a.std_iters:.1f} "
              f"final={a.final_metric_mean:.3g} converged={a.converged_fraction:.2f}")
    if result.out_dir is not None:
        print(f"wrote {result.out_dir}")
    if result.runs and all(r.terminated_by == Termination.NUMERICAL_FAILURE.value
                           for r in result.runs):
        print("error: numerical failure in every trial", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if cfg.eta_list is not None or cfg.n_list is not None:
        raise ConfigError("'run' executes a single configuration; use 'sweep' for eta_list/n_list")
    return _summarize(harness.run_experiment(cfg))


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg.eta_list is None and cfg.n_list is None:
        raise ConfigError("'sweep' needs --eta-list or --n-list")
    return _summarize(harness.run_experiment(cfg))


def cmd_compare(args) -> int:
    cfg = _config(args, methods=args.methods)
    return _summarize(harness.run_experiment(cfg))


def _point(text, dim, name):
    if text is None:
        return None
    v = np.array(_floats(text))
    if v.size != dim:
        raise ConfigError(f"--{name} has {v.size} entries, game needs {dim}")
    return v


def _load_game_and_point(args):
    spec = _game_spec(args)
    game = game_from_spec(spec)
    x = _point(args.x, game.dim_x, "x")
    y = _point(args.y, game.dim_y, "y")
    if (x is None) != (y is None):
        raise ConfigError("give both --x and --y or neither")
    if x is None:
        if game.known_equilibrium is not None:
            x, y = game.known_equilibrium
        elif game.is_bilinear:
            sol = solve_bilinear(game.payoff)
            x, y = sol.x, sol.y
        else:
            raise ConfigError("no equilibrium known for this game; pass --x and --y")
    return game, x, y


def cmd_kkt(args) -> int:
    game, x, y = _load_game_and_point(args)
    print(json.dumps(check_kkt(game, x, y, tol=args.tol).to_dict(), indent=2))
    return EXIT_OK


def cmd_spectral(args) -> int:
    from .spectral import stability_verdict

    game, x, y = _load_game_and_point(args)
    report = stability_verdict(game, x, y, args.eta, margin=args.margin)
    print(json.dumps(report.to_dict(dump_matrices=args.dump_matrices), indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.trajectory:
        game = game_from_spec(_game_spec(args))
        x0 = np.array(_floats(args.x0)) if args.x0 else np.full(game.dim_x, 1.0 / game.dim_x)
        y0 = np.array(_floats(args.y0)) if args.y0 else np.full(game.dim_y, 1.0 / game.dim_y)
        paths = harness.trajectory_visual(game, args.method, args.eta_list,
                                          DynamicsState.start(x0, y0), args.out,
                                          max_iters=args.max_iters, ball=args.ball)
        for eta, pts in paths.items():
            print(f"eta={eta:g}: {len(pts)} points, final (x1, y1) = ({pts[-1][0]:.3g}, {pts[-1][1]:.3g})")
        return EXIT_OK
    if not args.results or not args.kind:
        raise ConfigError("plot needs --results and --kind (or --trajectory)")
    result = harness.load_campaign(args.results)
    path = harness.emit_plot_data(result, args.kind, out_dir=args.out or args.results,
                                  svg_out=args.svg)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration for several trials")
    _campaign_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="step-size or problem-size sweep")
    _campaign_args(p, sweep=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="paired runs of several methods")
    _campaign_args(p, sweep=True)
    p.add_argument("--methods", type=_names, default=["omwu", "ogda"])
    p.set_defaults(func=cmd_compare)

    for name, func in (("kkt", cmd_kkt), ("spectral", cmd_spectral)):
        p = sub.add_parser(name, help=f"{name} report as JSON")
        _game_args(p)
        p.add_argument("--x", help="comma list; defaults to the known or LP equilibrium")
        p.add_argument("--y", help="comma list; defaults to the known or LP equilibrium")
        p.add_argument("--tol", type=float, default=1e-7)
        if name == "spectral":
            p.add_argument("--eta", type=float, required=True)
            p.add_argument("--margin", type=float, default=1e-9)
            p.add_argument("--dump-matrices", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="plot data from a campaign, or 2x2 trajectories")
    p.add_argument("--results", help="campaign output directory")
    p.add_argument("--kind", choices=harness.PLOT_KINDS)
    p.add_argument("--svg", action="store_true", help="also write a minimal SVG")
    p.add_argument("--out", help="output directory (default: the results directory)")
    p.add_argument("--trajectory", action="store_true", help="trace (x1, y1) on a 2x2 game")
    _game_args(p)
    p.add_argument("--method", choices=METHODS, default="omwu")
    p.add_argument("--eta-list", type=_floats, default=[0.1, 1.0, 10.0])
    p.add_argument("--x0")
    p.add_argument("--y0")
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--ball", type=float, default=1e-3)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, MissingMetricError, InvalidEquilibriumError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:  # noqa: BLE001 - last-resort handler maps to the internal-error code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
