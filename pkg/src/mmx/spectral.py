"""Jacobians of the lifted OMWU map and their spectra.

The lifted map acts on (x, y, z, w) = (x^t, y^t, x^{t-1}, y^{t-1}):

    g1 = x * exp(-2 eta grad_x f(x, y) + eta grad_x f(z, w)) / normalizer
    g2 = y * exp( 2 eta grad_y f(x, y) - eta grad_y f(z, w)) / normalizer
    g3 = x,  g4 = y

Coordinates of every full-size matrix here are ordered (x, y, z, w), giving
2(n + m) rows. Support-restricted matrices use the same block order with
k_x = |supp x*| and k_y = |supp y*|.

At an equilibrium the Jacobian restricted to the supports has two zero left
eigenvectors. Replacing D 1 1^T by zero in the diagonal blocks yields J_new,
whose spectrum contains every non-zero eigenvalue of the restricted Jacobian.
With

    J_small = 2 eta blockdiag(D_x - x x^T, D_y - y y^T) [[-H_xx, -H_xy], [H_yx, H_yy]]

an eigenvector (a, b, a / lam, b / lam) of J_new gives
J_small (a, b) = 2 lam (lam - 1) / (2 lam - 1) (a, b). So every eigenvalue lam
of J_new other than 1/2 satisfies lam (lam - 1) / (2 lam - 1) = eps / 2 for an
eigenvalue eps of J_small; note the factor one half.

J_new always has eigenvalue 1 from the zero eigenvalues of J_small (the left
null vectors (1, 0) and (0, 1)), and those copies are absent from the true
Jacobian. The spectral radius is therefore taken from the full fixed-point
Jacobian, whose spectrum is the tangent-space spectrum plus zeros.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .dynamics import omwu_update
from .equilibrium import KKT_TOL, SUPPORT_THRESHOLD, KktReport, KktVerdict, check_kkt, support
from .errors import EigensolverFailure, InvalidEquilibriumError, InvalidInputError, InvalidStateError
from .games import GameOracle

HALF_TOL = 1e-6
MATCH_TOL = 1e-6


def lifted_map(game: GameOracle, x, y, z, w, eta: float):
    """Evaluate g(x, y, z, w) = (x', y', x, y)."""
    x, y, z, w = (np.asarray(v, dtype=float) for v in (x, y, z, w))
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidStateError("lifted map needs x, y > 0 entrywise")
    x_new, y_new = omwu_update(x, y, game.grad_x(x, y), game.grad_y(x, y),
                               game.grad_x(z, w), game.grad_y(z, w), eta)
    return x_new, y_new, x, y


def _reweight_factors(p, exponent):
    """Return (r, q) with r_i = exp(e_i) / sum_k p_k exp(e_k) and q = p * r."""
    e = np.exp(exponent - exponent.max())
    r = e / (p @ e)
    return r, p * r


def jacobian_general(game: GameOracle, x, y, z, w, eta: float) -> np.ndarray:
    """Analytic Jacobian of ``lifted_map`` at (x, y, z, w).

    For g1_i = x_i e^{u_i} / S with S = sum_k x_k e^{u_k}, the quotient rule
    gives dg1_i/dv_j = delta_ij[v=x] r_i - g1_i r_j[v=x]
    + g1_i (du_i/dv_j - sum_k g1_k du_k/dv_j), r = e^u / S. In matrix form
    that is diag(r) - g1 r^T + (diag(g1) - g1 g1^T) dU/dv, and the same for g2.
    """
    x, y, z, w = (np.asarray(v, dtype=float) for v in (x, y, z, w))
    n, m = x.size, y.size
    cur, prev = game.hess(x, y), game.hess(z, w)

    rx, gx = _reweight_factors(x, -2 * eta * game.grad_x(x, y) + eta * game.grad_x(z, w))
    ry, gy = _reweight_factors(y, 2 * eta * game.grad_y(x, y) - eta * game.grad_y(z, w))
    px = np.diag(gx) - np.outer(gx, gx)
    py = np.diag(gy) - np.outer(gy, gy)

    J = np.zeros((2 * (n + m), 2 * (n + m)))
    ix, iy, iz, iw = (slice(0, n), slice(n, n + m), slice(n + m, 2 * n + m),
                      slice(2 * n + m, 2 * (n + m)))
    J[ix, ix] = np.diag(rx) - np.outer(gx, rx) - 2 * eta * px @ cur.xx
    J[ix, iy] = -2 * eta * px @ cur.xy
    J[ix, iz] = eta * px @ prev.xx
    J[ix, iw] = eta * px @ prev.xy
    J[iy, ix] = 2 * eta * py @ cur.yx
    J[iy, iy] = np.diag(ry) - np.outer(gy, ry) + 2 * eta * py @ cur.yy
    J[iy, iz] = -eta * py @ prev.yx
    J[iy, iw] = -eta * py @ prev.yy
    J[iz, ix] = np.eye(n)
    J[iw, iy] = np.eye(m)
    return J


def _require_equilibrium(game, x, y, tol, threshold) -> KktReport:
    rep = check_kkt(game, x, y, tol=tol, support_threshold=threshold)
    if rep.verdict is KktVerdict.FAIL:
        raise InvalidEquilibriumError(
            f"point fails KKT conditions (residual {rep.max_equality_residual:.3g}, "
            f"min slack {rep.min_slack:.3g})")
    return rep


def _quotients(x, grad, sign, eta):
    """e^{sign eta g_i} / sum_t x_t e^{sign eta g_t}, evaluated with a shift."""
    r, _ = _reweight_factors(x, sign * eta * grad)
    return r


def jacobian_fixed_point(game: GameOracle, x_star, y_star, eta: float,
                         tol: float = KKT_TOL,
                         support_threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    """Block-form Jacobian of the lifted map at (x*, y*, x*, y*).

    Diagonal blocks are diag(r) - D 1 r^T - 2 eta D (I - 1 x*^T) H_xx where r
    is the off-support quotient vector; r is 1 on the support, so for interior
    equilibria this is the familiar I - D 1 1^T - ... form.
    """
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    _require_equilibrium(game, x, y, tol, support_threshold)
    n, m = x.size, y.size
    H = game.hess(x, y)
    rx = _quotients(x, game.grad_x(x, y), -1.0, eta)
    ry = _quotients(y, game.grad_y(x, y), 1.0, eta)
    Px = np.diag(x) @ (np.eye(n) - np.outer(np.ones(n), x))
    Py = np.diag(y) @ (np.eye(m) - np.outer(np.ones(m), y))

    top = np.hstack([
        np.diag(rx) - np.outer(x, rx) - 2 * eta * Px @ H.xx,
        -2 * eta * Px @ H.xy,
        eta * Px @ H.xx,
        eta * Px @ H.xy,
    ])
    mid = np.hstack([
        2 * eta * Py @ H.yx,
        np.diag(ry) - np.outer(y, ry) + 2 * eta * Py @ H.yy,
        -eta * Py @ H.yx,
        -eta * Py @ H.yy,
    ])
    shift_x = np.hstack([np.eye(n), np.zeros((n, m + n + m))])
    shift_y = np.hstack([np.zeros((m, n)), np.eye(m), np.zeros((m, n + m))])
    return np.vstack([top, mid, shift_x, shift_y])


class OffSupportEig(NamedTuple):
    player: str
    index: int
    value: float


def _supports(x, y, threshold, support_x=None, support_y=None):
    sx = np.asarray(support_x, dtype=int) if support_x is not None else support(x, threshold)
    sy = np.asarray(support_y, dtype=int) if support_y is not None else support(y, threshold)
    if sx.size == 0 or sy.size == 0:
        raise InvalidInputError("empty support")
    return np.sort(sx), np.sort(sy)


def off_support_eigenvalues(game: GameOracle, x_star, y_star, eta: float,
                            support_threshold: float = SUPPORT_THRESHOLD,
                            support_x=None, support_y=None) -> list[OffSupportEig]:
    """Eigenvalues contributed by coordinates outside the supports.

    A row of the fixed-point Jacobian for an unplayed strategy has a single
    non-zero entry on its diagonal, the exponential quotient below.
    """
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    sx, sy = _supports(x, y, support_threshold, support_x, support_y)
    rx = _quotients(x, game.grad_x(x, y), -1.0, eta)
    ry = _quotients(y, game.grad_y(x, y), 1.0, eta)
    out = [OffSupportEig("x", int(i), float(rx[i])) for i in range(x.size) if i not in sx]
    out += [OffSupportEig("y", int(j), float(ry[j])) for j in range(y.size) if j not in sy]
    return out


def _restricted_parts(game, x, y, eta, sx, sy):
    H = game.hess(x, y)
    xs, ys = x[sx], y[sy]
    Px = np.diag(xs) - np.outer(xs, xs)
    Py = np.diag(ys) - np.outer(ys, ys)
    Hxx, Hxy = H.xx[np.ix_(sx, sx)], H.xy[np.ix_(sx, sy)]
    Hyx, Hyy = H.yx[np.ix_(sy, sx)], H.yy[np.ix_(sy, sy)]
    return xs, ys, Px, Py, Hxx, Hxy, Hyx, Hyy


def build_j_support(game: GameOracle, x_star, y_star, eta: float,
                    support_threshold: float = SUPPORT_THRESHOLD,
                    support_x=None, support_y=None) -> np.ndarray:
    """The fixed-point Jacobian restricted to supported coordinates (x, y, z, w)."""
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    sx, sy = _supports(x, y, support_threshold, support_x, support_y)
    J = build_j_new(game, x, y, eta, support_threshold, sx, sy)
    kx, ky = sx.size, sy.size
    J[:kx, :kx] -= np.outer(x[sx], np.ones(kx))
    J[kx:kx + ky, kx:kx + ky] -= np.outer(y[sy], np.ones(ky))
    return J


def build_j_new(game: GameOracle, x_star, y_star, eta: float,
                support_threshold: float = SUPPORT_THRESHOLD,
                support_x=None, support_y=None) -> np.ndarray:
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    sx, sy = _supports(x, y, support_threshold, support_x, support_y)
    _, _, Px, Py, Hxx, Hxy, Hyx, Hyy = _restricted_parts(game, x, y, eta, sx, sy)
    kx, ky = sx.size, sy.size
    Ix, Iy = np.eye(kx), np.eye(ky)
    return np.block([
        [Ix - 2 * eta * Px @ Hxx, -2 * eta * Px @ Hxy, eta * Px @ Hxx, eta * Px @ Hxy],
        [2 * eta * Py @ Hyx, Iy + 2 * eta * Py @ Hyy, -eta * Py @ Hyx, -eta * Py @ Hyy],
        [Ix, np.zeros((kx, ky + kx + ky))],
        [np.zeros((ky, kx)), Iy, np.zeros((ky, kx + ky))],
    ])


def build_j_small(game: GameOracle, x_star, y_star, eta: float,
                  support_threshold: float = SUPPORT_THRESHOLD,
                  support_x=None, support_y=None) -> np.ndarray:
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    sx, sy = _supports(x, y, support_threshold, support_x, support_y)
    _, _, Px, Py, Hxx, Hxy, Hyx, Hyy = _restricted_parts(game, x, y, eta, sx, sy)
    kx, ky = sx.size, sy.size
    scale = np.block([[Px, np.zeros((kx, ky))], [np.zeros((ky, kx)), Py]])
    h_minus = np.block([[-Hxx, -Hxy], [Hyx, Hyy]])
    return 2 * eta * scale @ h_minus


def eig(M) -> np.ndarray:
    """All eigenvalues of a dense real matrix, with algebraic multiplicity.

    Delegates to LAPACK geev (balancing, Hessenberg reduction, shifted QR).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"eig needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("eig needs finite entries")
    if M.size == 0:
        return np.zeros(0, dtype=complex)
    try:
        return np.linalg.eigvals(M).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(f"QR iteration failed to converge for a {M.shape[0]}x{M.shape[0]} matrix") from exc


def eigenvalue_map(epsilon: complex) -> tuple[complex, complex]:
    """Both roots of lam^2 - (1 + 2 eps) lam + eps = 0, smaller modulus first.

    These are the solutions of lam (lam - 1) / (2 lam - 1) = eps. The larger
    root is formed without cancellation; the smaller comes from the product.
    """
    eps = complex(epsilon)
    b = -(1 + 2 * eps)
    d = np.sqrt(complex(1 + 4 * eps * eps))
    if (b.conjugate() * d).real < 0:
        d = -d
    big = -(b + d) / 2
    small = eps / big if big != 0 else 0j
    return small, big


def rational_map(lam):
    """lam (lam - 1) / (2 lam - 1)."""
    lam = np.asarray(lam, dtype=complex)
    return lam * (lam - 1) / (2 * lam - 1)


class Verdict(str, Enum):
    CONTRACTION = "contraction"
    NOT_CONTRACTION = "not_contraction"


@dataclass
class SpectralReport:
    eta: float
    off_support_eigs: list[OffSupportEig]
    j_full: np.ndarray
    j_new: np.ndarray
    j_small: np.ndarray
    eig_full: np.ndarray
    eig_new: np.ndarray
    eig_small: np.ndarray
    spectral_radius: float
    verdict: Verdict
    small_max_real: float
    degenerate_equilibrium: bool
    kkt: KktReport
    support_x: list[int] = field(default_factory=list)
    support_y: list[int] = field(default_factory=list)
    reduction_mismatch: float = 0.0
    half_candidates: int = 0
    reduced_radius: float = 0.0

    def to_dict(self, dump_matrices: bool = False) -> dict:
        pairs = lambda arr: [[float(np.real(v)), float(np.imag(v))] for v in arr]
        out = {
            "eta": self.eta,
            "verdict": self.verdict.value,
            "spectral_radius": self.spectral_radius,
            "reduced_radius": self.reduced_radius,
            "small_max_real": self.small_max_real,
            "degenerate_equilibrium": self.degenerate_equilibrium,
            "support_x": self.support_x,
            "support_y": self.support_y,
            "off_support_eigs": [
                {"player": e.player, "index": e.index, "eigenvalue": e.value}
                for e in self.off_support_eigs
            ],
            "eig_new": pairs(self.eig_new),
            "eig_small": pairs(self.eig_small),
            "eig_full": pairs(self.eig_full),
            "reduction_mismatch": self.reduction_mismatch,
            "half_candidates": self.half_candidates,
            "kkt": self.kkt.to_dict(),
        }
        if dump_matrices:
            out["j_full"] = self.j_full.tolist()
            out["j_new"] = self.j_new.tolist()
            out["j_small"] = self.j_small.tolist()
        return out


def _zero_cut(M):
    return 1e-9 * (1.0 + np.linalg.norm(M, 2)) if M.size else 0.0


def stability_verdict(game: GameOracle, x_star, y_star, eta: float,
                      margin: float = 1e-9, tol: float = KKT_TOL,
                      support_threshold: float = SUPPORT_THRESHOLD,
                      support_x=None, support_y=None) -> SpectralReport:
    """Certify (or refute) local contraction of OMWU at an equilibrium."""
    x, y = np.asarray(x_star, dtype=float), np.asarray(y_star, dtype=float)
    kkt = _require_equilibrium(game, x, y, tol, support_threshold)
    degenerate = kkt.verdict is KktVerdict.PASS_DEGENERATE
    if degenerate:
        warnings.warn("equilibrium is degenerate (zero KKT slack); local convergence "
                      "is not covered by the strict-complementarity hypothesis",
                      RuntimeWarning, stacklevel=2)
    sx, sy = _supports(x, y, support_threshold, support_x, support_y)

    off = off_support_eigenvalues(game, x, y, eta, support_x=sx, support_y=sy)
    j_full = jacobian_fixed_point(game, x, y, eta, tol, support_threshold)
    j_new = build_j_new(game, x, y, eta, support_x=sx, support_y=sy)
    j_small = build_j_small(game, x, y, eta, support_x=sx, support_y=sy)
    eig_full, eig_new, eig_small = eig(j_full), eig(j_new), eig(j_small)

    cut = _zero_cut(j_small)
    nonzero = eig_small[np.abs(eig_small) > cut]
    small_max = float(nonzero.real.max()) if nonzero.size else 0.0

    # Reduction cross-check in both directions, exempting lam = 1/2.
    far = np.abs(2 * eig_new - 1) > HALF_TOL
    mismatch = 0.0
    if far.any():
        mapped = 2 * rational_map(eig_new[far])
        mismatch = float(np.abs(mapped[:, None] - eig_small[None, :]).min(axis=1).max())
    roots = [r for e in nonzero for r in eigenvalue_map(e / 2)]
    if roots:
        back = np.abs(np.asarray(roots)[:, None] - eig_new[None, :]).min(axis=1).max()
        mismatch = max(mismatch, float(back))
    if mismatch > MATCH_TOL:
        warnings.warn(f"J_new / J_small spectra disagree by {mismatch:.3g}",
                      RuntimeWarning, stacklevel=2)

    moduli = [0.0] + [abs(e.value) for e in off]
    radius = float(max(np.abs(eig_full).max(initial=0.0), *moduli))
    reduced = float(max([abs(r) for r in roots] + moduli))
    verdict = Verdict.CONTRACTION if radius < 1 - margin else Verdict.NOT_CONTRACTION

    return SpectralReport(
        eta=float(eta), off_support_eigs=off, j_full=j_full, j_new=j_new, j_small=j_small,
        eig_full=eig_full, eig_new=eig_new, eig_small=eig_small, spectral_radius=radius,
        verdict=verdict, small_max_real=small_max, degenerate_equilibrium=degenerate,
        kkt=kkt, support_x=sx.tolist(), support_y=sy.tolist(),
        reduction_mismatch=mismatch, half_candidates=int((~far).sum()),
        reduced_radius=reduced,
    )
