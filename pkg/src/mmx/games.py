"""Payoff oracles for simplex-constrained min-max games.

A game is a function f(x, y) paid by the x player (minimizer) to the y player
(maximizer), with x on the n-simplex and y on the m-simplex. Oracles carry
analytic gradients and Hessian blocks; nothing here restricts to supports.

Randomness: every seeded routine uses numpy's PCG64 bit generator seeded with
a 64-bit integer (``numpy.random.Generator(PCG64(seed))``). Normal draws use
the generator's ziggurat sampler, Dirichlet draws its gamma sampler. Both are
stable across platforms for a fixed numpy version.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidGameError, InvalidInputError, InvalidParameterError

SIMPLEX_TOL = 1e-9

GAME_KINDS = ("bilinear", "random_bilinear", "quadratic", "regularized_bilinear")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed."""
    if seed < 0 or seed >= 2**64:
        raise InvalidParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def simplex_point(probs, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate ``probs`` as a point of the simplex and return a clean copy.

    Entries in [-tol, 0) are clamped to zero and the vector is renormalized.
    Anything further from the simplex raises ``InvalidInputError``.
    """
    p = np.array(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("a simplex point must be a non-empty vector")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("simplex point has non-finite entries")
    if p.min() < -tol:
        raise InvalidInputError(f"negative entry {p.min():.3g} beyond tolerance {tol:g}")
    if abs(p.sum() - 1.0) > tol:
        raise InvalidInputError(f"entries sum to {p.sum()!r}, not 1 within {tol:g}")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def dirichlet_point(n: int, rng: np.random.Generator, floor: float = 0.0) -> np.ndarray:
    """Draw from Dirichlet(1, ..., 1); optionally clamp entries to ``floor``."""
    p = rng.dirichlet(np.ones(n))
    if floor > 0:
        p = np.maximum(p, floor)
        p /= p.sum()
    return p


class HessianBlocks(NamedTuple):
    xx: np.ndarray
    xy: np.ndarray
    yx: np.ndarray
    yy: np.ndarray


@dataclass(frozen=True)
class GameOracle:
    """Twice-differentiable payoff f(x, y) with analytic derivatives.

    ``payoff`` holds the matrix of the bilinear part for the built-in
    families (None for custom games); ``kind`` is ``"bilinear"`` only when f
    is exactly x^T A y, which enables closed-form best responses downstream.
    """

    dim_x: int
    dim_y: int
    value: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray, np.ndarray], HessianBlocks]
    kind: str = "custom"
    payoff: np.ndarray | None = field(default=None, repr=False)
    alpha: float = 0.0
    known_equilibrium: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def is_bilinear(self) -> bool:
        return self.kind == "bilinear"


def _check_matrix(A) -> np.ndarray:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidGameError(f"payoff must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidGameError("payoff matrix has non-finite entries")
    A.setflags(write=False)
    return A


def make_bilinear(A) -> GameOracle:
    """f(x, y) = x^T A y."""
    A = _check_matrix(A)
    n, m = A.shape
    At = A.T
    zx, zy = np.zeros((n, n)), np.zeros((m, m))
    blocks = HessianBlocks(zx, A, At, zy)

    return GameOracle(
        dim_x=n,
        dim_y=m,
        value=lambda x, y: float(x @ A @ y),
        grad_x=lambda x, y: A @ y,
        grad_y=lambda x, y: At @ x,
        hess=lambda x, y: blocks,
        kind="bilinear",
        payoff=A,
    )


def make_random_bilinear(n: int, m: int, seed: int) -> GameOracle:
    """Bilinear game with i.i.d. standard normal payoffs drawn from PCG64(seed)."""
    if n < 1 or m < 1:
        raise InvalidGameError(f"dimensions must be positive, got n={n}, m={m}")
    return make_bilinear(make_rng(seed).standard_normal((n, m)))


def make_quadratic_example() -> GameOracle:
    """f(x, y) = x1^2 - y1^2 + 2 x1 y1 on two 2-simplices.

    Convex in x, concave in y, not bilinear. Its equilibrium is x = y = (0, 1).
    """
    H = HessianBlocks(
        np.diag([2.0, 0.0]),
        np.array([[2.0, 0.0], [0.0, 0.0]]),
        np.array([[2.0, 0.0], [0.0, 0.0]]),
        np.diag([-2.0, 0.0]),
    )

    def value(x, y):
        return float(x[0] ** 2 - y[0] ** 2 + 2 * x[0] * y[0])

    def grad_x(x, y):
        return np.array([2 * x[0] + 2 * y[0], 0.0])

    def grad_y(x, y):
        return np.array([2 * x[0] - 2 * y[0], 0.0])

    eq = (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    return GameOracle(2, 2, value, grad_x, grad_y, lambda x, y: H, kind="quadratic",
                      known_equilibrium=eq)


def make_regularized_bilinear(A, alpha: float) -> GameOracle:
    """f(x, y) = x^T A y + alpha |x|^2 - alpha |y|^2 (strictly convex-concave for alpha > 0)."""
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return make_bilinear(A)
    A = _check_matrix(A)
    n, m = A.shape
    At = A.T
    blocks = HessianBlocks(2 * alpha * np.eye(n), A, At, -2 * alpha * np.eye(m))

    return GameOracle(
        dim_x=n,
        dim_y=m,
        value=lambda x, y: float(x @ A @ y + alpha * (x @ x) - alpha * (y @ y)),
        grad_x=lambda x, y: A @ y + 2 * alpha * x,
        grad_y=lambda x, y: At @ x - 2 * alpha * y,
        hess=lambda x, y: blocks,
        kind="regularized_bilinear",
        payoff=A,
        alpha=float(alpha),
    )


def plant_equilibrium(A0, alpha: float, x_star, y_star) -> GameOracle:
    """Regularized bilinear game whose equilibrium is the given interior pair.

    Adds p 1^T + 1 q^T to ``A0`` so that A y* + 2 alpha x* and
    A^T x* - 2 alpha y* are constant vectors; a rank-one term of that form
    shifts every payoff row (or column) uniformly, so the KKT equalities hold
    at (x*, y*) exactly.
    """
    A0 = _check_matrix(A0)
    x_star, y_star = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    if x_star.min() <= 0 or y_star.min() <= 0:
        raise InvalidParameterError("planted equilibrium must be interior")
    p = -(A0 @ y_star) - 2 * alpha * x_star
    q = -(A0.T @ x_star) + 2 * alpha * y_star
    A = A0 + np.outer(p, np.ones(A0.shape[1])) + np.outer(np.ones(A0.shape[0]), q)
    game = make_regularized_bilinear(A, alpha)
    return replace(game, known_equilibrium=(x_star, y_star))


def make_planted_game(n: int, m: int, alpha: float, seed: int) -> GameOracle:
    """Random regularized bilinear game with a Dirichlet-drawn interior equilibrium."""
    rng = make_rng(seed)
    A0 = rng.standard_normal((n, m))
    return plant_equilibrium(A0, alpha, dirichlet_point(n, rng), dirichlet_point(m, rng))


@dataclass
class ConvexityReport:
    passed: bool
    min_eig_xx: float
    max_eig_yy: float
    witness: tuple[np.ndarray, np.ndarray] | None = None


def check_convex_concave(game: GameOracle, n_samples: int = 100, seed: int = 0,
                         tol: float = 1e-9) -> ConvexityReport:
    """Screen the Hessian blocks for convexity in x and concavity in y.

    Samples interior points from Dirichlet(1) and tracks the smallest
    eigenvalue of H_xx and the largest of H_yy. The witness is the sample
    where the worst violation occurred (None on a pass).
    """
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    rng = make_rng(seed)
    lo, hi = np.inf, -np.inf
    worst, witness = 0.0, None
    for _ in range(n_samples):
        x = dirichlet_point(game.dim_x, rng)
        y = dirichlet_point(game.dim_y, rng)
        H = game.hess(x, y)
        ex = float(np.linalg.eigvalsh((H.xx + H.xx.T) / 2)[0])
        ey = float(np.linalg.eigvalsh((H.yy + H.yy.T) / 2)[-1])
        lo, hi = min(lo, ex), max(hi, ey)
        violation = max(-ex, ey)
        if violation > tol and violation > worst:
            worst, witness = violation, (x, y)
    return ConvexityReport(lo >= -tol and hi <= tol, lo, hi, witness)


def load_matrix_csv(path) -> np.ndarray:
    """Read a header-free, row-major CSV of floats."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise InvalidGameError(f"{path}: expected a rectangular numeric matrix")
    return np.array(rows)


_SPEC_KEYS = {"kind", "A", "n", "m", "seed", "alpha"}


def game_from_spec(spec: dict, base_dir: str | Path | None = None) -> GameOracle:
    """Build a game from its JSON description.

    ``{"kind": "bilinear"|"random_bilinear"|"quadratic"|"regularized_bilinear",
    "A": [[...]] or "matrix.csv", "n": int, "m": int, "seed": int, "alpha": float}``
    Keys not used by the chosen kind are ignored; unknown keys are rejected.
    """
    unknown = set(spec) - _SPEC_KEYS
    if unknown:
        raise InvalidGameError(f"unknown game keys: {sorted(unknown)}")
    kind = spec.get("kind")
    if kind not in GAME_KINDS:
        raise InvalidGameError(f"unknown game kind {kind!r}; expected one of {GAME_KINDS}")

    def matrix():
        if "A" not in spec:
            raise InvalidGameError(f"game kind {kind!r} requires 'A'")
        A = spec["A"]
        if isinstance(A, str):
            p = Path(A)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            return load_matrix_csv(p)
        return A

    if kind == "bilinear":
        return make_bilinear(matrix())
    if kind == "regularized_bilinear":
        return make_regularized_bilinear(matrix(), float(spec.get("alpha", 0.0)))
    if kind == "quadratic":
        return make_quadratic_example()
    n = int(spec.get("n", 0))
    return make_random_bilinear(n, int(spec.get("m", n)), int(spec.get("seed", 0)))


def load_game(path) -> GameOracle:
    path = Path(path)
    with open(path) as fh:
        return game_from_spec(json.load(fh), base_dir=path.parent)
