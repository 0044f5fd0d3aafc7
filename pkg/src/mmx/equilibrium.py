"""Equilibrium certification and exact solutions of matrix games.

``check_kkt`` classifies a candidate point against the first-order
conditions of the simplex-constrained saddle problem. ``solve_bilinear``
solves min_x max_y x^T A y with a dense tableau simplex method using Bland's
rule, then polishes the vertex by solving the indifference equations on the
detected supports.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import project_simplex
from .errors import InvalidGameError, SolverFailure
from .games import GameOracle, make_bilinear, simplex_point

SUPPORT_THRESHOLD = 1e-9
KKT_TOL = 1e-7


class KktVerdict(str, Enum):
    PASS_STRICT = "pass_strict"
    PASS_DEGENERATE = "pass_degenerate"
    FAIL = "fail"


@dataclass
class KktReport:
    support_x: list[int]
    support_y: list[int]
    max_equality_residual: float
    min_slack: float
    verdict: KktVerdict

    @property
    def equalities_hold(self) -> bool:
        return self.verdict is not KktVerdict.FAIL

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "max_equality_residual": self.max_equality_residual,
            "min_slack": self.min_slack,
            "support_x": self.support_x,
            "support_y": self.support_y,
        }


def support(p: np.ndarray, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    return np.flatnonzero(np.asarray(p) > threshold)


def check_kkt(game: GameOracle, x, y, tol: float = KKT_TOL,
              support_threshold: float = SUPPORT_THRESHOLD) -> KktReport:
    """Evaluate the KKT conditions of min_x max_y f at (x, y).

    On the support each partial derivative must equal its probability-weighted
    average. Off the support the min player needs the partial at or above the
    average and the max player at or below; the margin is the slack.
    """
    x, y = simplex_point(x), simplex_point(y)
    gx, gy = game.grad_x(x, y), game.grad_y(x, y)
    sx, sy = support(x, support_threshold), support(y, support_threshold)
    dev_x = gx - x @ gx
    dev_y = gy - y @ gy

    residual = max(np.abs(dev_x[sx]).max(initial=0.0), np.abs(dev_y[sy]).max(initial=0.0))
    off_x = np.setdiff1d(np.arange(x.size), sx)
    off_y = np.setdiff1d(np.arange(y.size), sy)
    slacks = np.concatenate([dev_x[off_x], -dev_y[off_y]])
    min_slack = float(slacks.min()) if slacks.size else float("inf")

    if residual > tol or min_slack < -tol:
        verdict = KktVerdict.FAIL
    elif min_slack <= tol:
        verdict = KktVerdict.PASS_DEGENERATE
    else:
        verdict = KktVerdict.PASS_STRICT
    return KktReport(sx.tolist(), sy.tolist(), float(residual), min_slack, verdict)


def _simplex_max(M: np.ndarray, max_pivots: int, eps: float = 1e-12):
    """Solve max 1^T u s.t. M u <= 1, u >= 0 for entrywise-positive M.

    Returns (u, p, pivots) where p is the optimal dual (min 1^T p, M^T p >= 1).
    Origin is feasible, so no phase one is needed. Bland's rule picks the
    lowest-index improving column and breaks ratio ties by lowest basic index.
    """
    n, m = M.shape
    T = np.zeros((n + 1, m + n + 1))
    T[:n, :m] = M
    T[:n, m:m + n] = np.eye(n)
    T[:n, -1] = 1.0
    T[n, :m] = 1.0  # reduced costs
    basis = list(range(m, m + n))

    for pivots in range(max_pivots + 1):
        improving = np.flatnonzero(T[n, :-1] > eps)
        if improving.size == 0:
            break
        if pivots == max_pivots:
            raise SolverFailure(
                f"simplex method did not converge within {max_pivots} pivots "
                f"({n}x{m} game, objective {-T[n, -1]:.6g})", iterations=pivots)
        j = improving[0]
        col = T[:n, j]
        rows = np.flatnonzero(col > eps)
        if rows.size == 0:
            raise SolverFailure("LP unbounded; payoff shift failed", iterations=pivots)
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + eps * max(1.0, abs(best))]
        r = min(ties, key=lambda i: basis[i])
        T[r] /= T[r, j]
        for i in range(n + 1):
            if i != r and T[i, j] != 0.0:
                T[i] -= T[i, j] * T[r]
        basis[r] = j

    u = np.zeros(m)
    for i, b in enumerate(basis):
        if b < m:
            u[b] = T[i, -1]
    p = -T[n, m:m + n]
    return np.maximum(u, 0.0), np.maximum(p, 0.0), pivots


def _polish(A, x, y, threshold):
    """Re-solve the indifference equations on the supports; None if not square/regular."""
    sx, sy = support(x, threshold), support(y, threshold)
    k = sx.size
    if k != sy.size:
        return None
    sub = A[np.ix_(sx, sy)]
    border = np.zeros((k + 1, k + 1))
    border[:k, :k] = sub
    border[:k, k] = -1.0
    border[k, :k] = 1.0
    if np.linalg.cond(border) > 1e12:
        return None
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    ys = np.linalg.solve(border, rhs)
    border_t = border.copy()
    border_t[:k, :k] = sub.T
    xs = np.linalg.solve(border_t, rhs)
    if ys[:k].min() <= 0 or xs[:k].min() <= 0:
        return None
    x_new, y_new = np.zeros_like(x), np.zeros_like(y)
    x_new[sx], y_new[sy] = xs[:k], ys[:k]
    return x_new / x_new.sum(), y_new / y_new.sum()


@dataclass
class BilinearSolution:
    x: np.ndarray
    y: np.ndarray
    value: float
    unique_hint: bool
    pivots: int = 0

    def __iter__(self):
        return iter((self.x, self.y, self.value, self.unique_hint))


def solve_bilinear(A, tol: float = KKT_TOL, max_pivots: int = 100_000,
                   support_threshold: float = SUPPORT_THRESHOLD) -> BilinearSolution:
    """Exact equilibrium of min_x max_y x^T A y.

    ``unique_hint`` is True when the polished vertex is square, non-singular
    and strictly complementary on both sides, which is sufficient for a
    unique equilibrium. It may be False for games that are in fact unique.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.size == 0 or not np.all(np.isfinite(A)):
        raise InvalidGameError("payoff matrix must be a finite, non-empty 2-D array")
    # Rescale to unit max-norm (equilibria are scale invariant), then shift positive.
    scale = np.abs(A).max() or 1.0
    B = A / scale
    # Min player: max 1^T p s.t. (B + shift)^T p <= 1; its dual gives the max player.
    p, q, pivots = _simplex_max((B + (1.0 - B.min())).T, max_pivots)
    if not p.sum() > 0 or not q.sum() > 0:
        raise SolverFailure("degenerate LP optimum", iterations=pivots)
    x, y = p / p.sum(), q / q.sum()

    unique = False
    # KKT tolerances apply to the rescaled game.
    polished = _polish(B, x, y, support_threshold)
    game = make_bilinear(B)
    if polished is not None:
        rep = check_kkt(game, *polished, tol=tol, support_threshold=support_threshold)
        if rep.equalities_hold:
            x, y = polished
            unique = rep.verdict is KktVerdict.PASS_STRICT
    rep = check_kkt(game, x, y, tol=tol, support_threshold=support_threshold)
    if not rep.equalities_hold:
        raise SolverFailure(
            f"LP solution fails KKT check (residual {rep.max_equality_residual:.3g}, "
            f"slack {rep.min_slack:.3g})", iterations=pivots)
    return BilinearSolution(x, y, float(x @ A @ y), unique, pivots)


@dataclass
class GapResult:
    gap: float
    residual: float = 0.0
    approximate: bool = False


def _minimize_on_simplex(fun, grad, p0, tol, max_iter):
    """Projected gradient descent with backtracking for a convex function.

    Returns (value, gradient-mapping residual, converged). Iterates descend
    monotonically from ``p0``.
    """
    p, fp = p0.copy(), fun(p0)
    step, res = 1.0, np.inf
    for _ in range(max_iter):
        g = grad(p)
        while True:
            q = project_simplex(p - step * g)
            d = q - p
            fq = fun(q)
            if fq <= fp + g @ d + (d @ d) / (2 * step) + 1e-15 * abs(fp) or step < 1e-12:
                break
            step /= 2
        res = np.linalg.norm(d) / step
        if fq <= fp:
            p, fp = q, fq
        if res <= tol:
            return fp, res, True
        step *= 2
    return fp, res, False


def duality_gap_detail(game: GameOracle, x, y, tol: float = 1e-9,
                       max_iter: int = 10_000) -> GapResult:
    """max_{y'} f(x, y') - min_{x'} f(x', y) with solver diagnostics.

    Bilinear games use the closed form. Other games solve both inner problems
    by projected gradient started at the given point; ``approximate`` is set
    when either inner solve stops at ``max_iter`` before reaching ``tol``.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if game.is_bilinear:
        return GapResult(float(game.grad_y(x, y).max() - game.grad_x(x, y).min()))
    hi, res_y, ok_y = _minimize_on_simplex(
        lambda v: -game.value(x, v), lambda v: -game.grad_y(x, v), y, tol, max_iter)
    lo, res_x, ok_x = _minimize_on_simplex(
        lambda v: game.value(v, y), lambda v: game.grad_x(v, y), x, tol, max_iter)
    return GapResult(float(-hi - lo), float(max(res_x, res_y)), not (ok_x and ok_y))


def duality_gap(game: GameOracle, x, y, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    result = duality_gap_detail(game, x, y, tol, max_iter)
    if result.approximate:
        warnings.warn(f"duality gap is approximate (inner residual {result.residual:.3g})",
                      RuntimeWarning, stacklevel=2)
    return result.gap
