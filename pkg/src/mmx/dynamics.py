"""OMWU, projected OGDA and MWU steppers, trajectory execution and metrics.

All steppers act on the lifted state (x^t, y^t, x^{t-1}, y^{t-1}). The
optimistic methods use both gradient pairs; MWU ignores the history.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, InvalidStateError, MmxError, NumericalFailure
from .games import GameOracle

# Multiplicative updates underflow for coordinates driven to a boundary
# equilibrium; entries are floored here so the state stays strictly positive.
POSITIVE_FLOOR = np.finfo(float).tiny

METHODS = ("omwu", "ogda", "mwu")
METRICS = ("l1", "kl", "gap")


@dataclass(frozen=True)
class DynamicsState:
    x: np.ndarray
    y: np.ndarray
    x_prev: np.ndarray
    y_prev: np.ndarray

    @classmethod
    def start(cls, x, y) -> "DynamicsState":
        """State with the previous iterate equal to the current one."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(x, y, x, y)

    def as_tuple(self):
        return self.x, self.y, self.x_prev, self.y_prev


class Termination(str, Enum):
    TOL_REACHED = "tol_reached"
    MAX_ITERS = "max_iters"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class MetricRow:
    iter: int
    l1_error: float | None = None
    kl: float | None = None
    duality_gap: float | None = None
    wall_time_s: float = 0.0

    def get(self, metric: str) -> float | None:
        return {"l1": self.l1_error, "kl": self.kl, "gap": self.duality_gap}[metric]


@dataclass
class Trajectory:
    states: list[DynamicsState] = field(default_factory=list)
    metrics: list[MetricRow] = field(default_factory=list)
    terminated_by: Termination = Termination.MAX_ITERS
    final_state: DynamicsState | None = None
    failure: str | None = None

    @property
    def iterations(self) -> int:
        """Index of the last recorded iterate (0 for an empty run)."""
        return self.metrics[-1].iter if self.metrics else 0


def _check_eta(eta):
    if not (eta > 0 and math.isfinite(eta)):
        raise InvalidParameterError(f"step size must be positive and finite, got {eta}")


def _check_finite(*grads):
    # A sum is non-finite iff some entry is (or the entries overflow, also a failure).
    for g in grads:
        if not math.isfinite(g.sum()):
            raise NumericalFailure("non-finite gradient")


def _require_positive(state: DynamicsState):
    for name, v in zip(("x", "y", "x_prev", "y_prev"), state.as_tuple()):
        if np.any(v <= 0):
            raise InvalidStateError(f"multiplicative update needs {name} > 0 entrywise")


def reweight(p: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    """Return p_i exp(e_i) / sum_k p_k exp(e_k), computed with max-shifted exponents."""
    top = exponent.max()
    if not math.isfinite(top):
        raise NumericalFailure("exponent overflow in multiplicative update")
    q = p * np.exp(exponent - top)
    q /= q.sum()
    # Raising entries to ~2e-308 shifts the sum by far less than one ulp.
    return np.maximum(q, POSITIVE_FLOOR, out=q)


def omwu_update(x, y, gx, gy, gx_prev, gy_prev, eta):
    """One OMWU update given current and previous gradients."""
    _check_finite(gx, gy, gx_prev, gy_prev)
    x_new = reweight(x, -2 * eta * gx + eta * gx_prev)
    y_new = reweight(y, 2 * eta * gy - eta * gy_prev)
    return x_new, y_new


def omwu_step(state: DynamicsState, game: GameOracle, eta: float) -> DynamicsState:
    _check_eta(eta)
    _require_positive(state)
    x, y, xp, yp = state.as_tuple()
    x_new, y_new = omwu_update(x, y, game.grad_x(x, y), game.grad_y(x, y),
                               game.grad_x(xp, yp), game.grad_y(xp, yp), eta)
    return DynamicsState(x_new, y_new, x, y)


def mwu_step(state: DynamicsState, game: GameOracle, eta: float) -> DynamicsState:
    _check_eta(eta)
    _require_positive(state)
    x, y = state.x, state.y
    gx, gy = game.grad_x(x, y), game.grad_y(x, y)
    _check_finite(gx, gy)
    return DynamicsState(reweight(x, -eta * gx), reweight(y, eta * gy), x, y)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("projection needs a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    p = np.maximum(v - css[rho] / (rho + 1), 0.0)
    return p / p.sum()


def ogda_update(x, y, gx, gy, gx_prev, gy_prev, eta):
    _check_finite(gx, gy, gx_prev, gy_prev)
    x_new = project_simplex(x - 2 * eta * gx + eta * gx_prev)
    y_new = project_simplex(y + 2 * eta * gy - eta * gy_prev)
    return x_new, y_new


def ogda_step(state: DynamicsState, game: GameOracle, eta: float) -> DynamicsState:
    _check_eta(eta)
    x, y, xp, yp = state.as_tuple()
    x_new, y_new = ogda_update(x, y, game.grad_x(x, y), game.grad_y(x, y),
                               game.grad_x(xp, yp), game.grad_y(xp, yp), eta)
    return DynamicsState(x_new, y_new, x, y)


STEPPERS = {"omwu": omwu_step, "ogda": ogda_step, "mwu": mwu_step}


def l1_error(state: DynamicsState, reference) -> float:
    x_star, y_star = (np.asarray(r, dtype=float) for r in reference)
    if x_star.shape != state.x.shape or y_star.shape != state.y.shape:
        raise InvalidInputError(
            f"reference shapes {x_star.shape}, {y_star.shape} do not match state "
            f"{state.x.shape}, {state.y.shape}")
    return float(np.abs(state.x - x_star).sum() + np.abs(state.y - y_star).sum())


def _kl(p, q):
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_to_iterate(reference, state: DynamicsState) -> float:
    """KL((x*, y*) || (x^t, y^t)); ``math.inf`` when the iterate misses the reference support."""
    x_star, y_star = (np.asarray(r, dtype=float) for r in reference)
    if x_star.shape != state.x.shape or y_star.shape != state.y.shape:
        raise InvalidInputError("reference and state dimensions differ")
    return _kl(x_star, state.x) + _kl(y_star, state.y)


@dataclass
class StopRule:
    tol: float = 1e-5
    metric: str | None = None  # l1 with a reference, gap otherwise
    max_iters: int = 200_000


def _gap_fn(game: GameOracle):
    from .equilibrium import duality_gap
    return lambda s: duality_gap(game, s.x, s.y)


def run(game: GameOracle, method: str, eta: float, init: DynamicsState,
        stop: StopRule | None = None, reference=None,
        metrics: tuple[str, ...] | None = None, stride: int = 1,
        keep_states: bool = False) -> Trajectory:
    """Iterate ``method`` from ``init`` until the stop metric reaches ``stop.tol``.

    Metrics are evaluated at iteration 0 and then every ``stride`` iterations;
    the final iterate is always recorded; ``max_iters=0`` yields an empty
    trajectory. The stop metric is evaluated every
    iteration regardless of stride. Stepper errors end the run with
    ``Termination.NUMERICAL_FAILURE`` and keep the partial trajectory.
    """
    # Overflow is detected explicitly and reported as a numerical failure.
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(game, method, eta, init, stop, reference, metrics, stride, keep_states)


def _run(game: GameOracle, method: str, eta: float, init: DynamicsState,
        stop: StopRule | None = None, reference=None,
        metrics: tuple[str, ...] | None = None, stride: int = 1,
        keep_states: bool = False) -> Trajectory:
    if method not in STEPPERS:
        raise InvalidParameterError(f"unknown method {method!r}")
    _check_eta(eta)
    if stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    stop = stop or StopRule()
    stop_metric = stop.metric or ("l1" if reference is not None else "gap")
    if stop_metric not in METRICS:
        raise InvalidParameterError(f"unknown stop metric {stop_metric!r}")
    if stop_metric in ("l1", "kl") and reference is None:
        raise InvalidParameterError(f"stop metric {stop_metric!r} needs a reference equilibrium")
    metrics = tuple(metrics) if metrics is not None else (stop_metric,)
    if any(m not in METRICS for m in metrics):
        raise InvalidParameterError(f"unknown metric in {metrics}")
    if reference is None and any(m in ("l1", "kl") for m in metrics):
        raise InvalidParameterError("l1/kl metrics need a reference equilibrium")
    if method in ("omwu", "mwu"):
        _require_positive(init)

    gap = _gap_fn(game)
    evaluators = {
        "l1": lambda s: l1_error(s, reference),
        "kl": lambda s: kl_to_iterate(reference, s),
        "gap": gap,
    }
    traj = Trajectory()
    t0 = time.perf_counter()

    def record(t, s, cache):
        vals = {m: cache[m] if m in cache else evaluators[m](s) for m in metrics}
        traj.metrics.append(MetricRow(t, vals.get("l1"), vals.get("kl"), vals.get("gap"),
                                      time.perf_counter() - t0))
        if keep_states:
            traj.states.append(s)

    state = init
    if stop.max_iters == 0:
        traj.final_state = state
        return traj
    # Gradients at the previous iterate are reused from the last step.
    x, y, xp, yp = state.as_tuple()
    try:
        gx, gy = game.grad_x(x, y), game.grad_y(x, y)
        if method == "mwu":
            gxp, gyp = gx, gy
        else:
            gxp, gyp = game.grad_x(xp, yp), game.grad_y(xp, yp)
        _check_finite(gx, gy, gxp, gyp)
    except (MmxError, FloatingPointError) as exc:
        traj.terminated_by, traj.failure = Termination.NUMERICAL_FAILURE, str(exc)
        traj.final_state = state
        return traj

    # Bilinear gap from the cached gradients: max_j (A^T x)_j - min_i (A y)_i.
    cheap_gap = game.is_bilinear and stop_metric == "gap"
    t = 0
    last_recorded = -1
    while True:
        stop_val = float(gy.max() - gx.min()) if cheap_gap else evaluators[stop_metric](state)
        if stop_val <= stop.tol:
            record(t, state, {stop_metric: stop_val})
            traj.terminated_by = Termination.TOL_REACHED
            break
        if t >= stop.max_iters:
            record(t, state, {stop_metric: stop_val})
            traj.terminated_by = Termination.MAX_ITERS
            break
        if t % stride == 0:
            record(t, state, {stop_metric: stop_val})
            last_recorded = t
        try:
            # Gradients were checked when computed; call the kernels directly.
            if method == "omwu":
                x_new = reweight(x, eta * (gxp - 2 * gx))
                y_new = reweight(y, eta * (2 * gy - gyp))
            elif method == "ogda":
                x_new = project_simplex(x - 2 * eta * gx + eta * gxp)
                y_new = project_simplex(y + 2 * eta * gy - eta * gyp)
            else:
                x_new, y_new = reweight(x, -eta * gx), reweight(y, eta * gy)
            gxp, gyp = gx, gy
            gx, gy = game.grad_x(x_new, y_new), game.grad_y(x_new, y_new)
            _check_finite(gx, gy)
        except (MmxError, FloatingPointError) as exc:
            traj.terminated_by, traj.failure = Termination.NUMERICAL_FAILURE, str(exc)
            if last_recorded != t:
                record(t, state, {stop_metric: stop_val})
            break
        state = DynamicsState(x_new, y_new, x, y)
        x, y = x_new, y_new
        t += 1

    traj.final_state = state
    return traj


CSV_HEADER = ("iter", "l1", "kl", "gap", "wall_time_s")


def _fmt(v):
    return "" if v is None else repr(float(v))


def metric_fields(row: MetricRow) -> list[str]:
    return [str(row.iter), _fmt(row.l1_error), _fmt(row.kl), _fmt(row.duality_gap),
            f"{row.wall_time_s:.6f}"]


def write_metrics_csv(traj: Trajectory, path) -> None:
    """Write ``iter,l1,kl,gap,wall_time_s``; absent metrics are empty fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in traj.metrics:
            w.writerow(metric_fields(row))
