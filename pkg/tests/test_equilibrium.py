import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import DOMINATED, PENNIES, RPS
from mmx.dynamics import DynamicsState, StopRule, run
from mmx.equilibrium import (KktVerdict, check_kkt, duality_gap, duality_gap_detail,
                             solve_bilinear, support)
from mmx.errors import InvalidGameError, InvalidInputError, SolverFailure
from mmx.games import (make_bilinear, make_planted_game, make_quadratic_example,
                       make_random_bilinear, make_regularized_bilinear)


def lp_value(A):
    """Game value min_x max_y x^T A y from scipy's HiGHS, as an independent oracle."""
    n, m = A.shape
    # variables (x, v): minimize v s.t. A^T x <= v, sum x = 1, x >= 0
    c = np.r_[np.zeros(n), 1.0]
    A_ub = np.c_[A.T, -np.ones(m)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=np.r_[np.ones(n), 0.0][None],
                  b_eq=[1.0], bounds=[(0, None)] * n + [(None, None)], method="highs")
    assert res.success
    return res.fun


class TestKkt:
    def test_pennies_strict(self, pennies):
        rep = check_kkt(pennies, [0.5, 0.5], [0.5, 0.5])
        assert rep.verdict is KktVerdict.PASS_STRICT
        assert rep.max_equality_residual == 0.0
        assert rep.min_slack == math.inf
        assert rep.support_x == [0, 1] and rep.support_y == [0, 1]

    def test_quadratic_degenerate(self):
        rep = check_kkt(make_quadratic_example(), [0, 1], [0, 1])
        assert rep.verdict is KktVerdict.PASS_DEGENERATE
        assert rep.max_equality_residual == 0.0
        assert rep.min_slack == 0.0
        assert rep.support_x == [1] and rep.support_y == [1]

    def test_pennies_fail(self, pennies):
        rep = check_kkt(pennies, [0.9, 0.1], [0.5, 0.5])
        assert rep.verdict is KktVerdict.FAIL
        # A^T x = (0.8, -0.8) with average 0: deviation 0.8 on both supported y coordinates.
        assert rep.max_equality_residual == pytest.approx(0.8, abs=1e-15)

    def test_negative_slack_fails(self):
        # row 3 never played although it is the cheapest for the min player
        g = make_bilinear([[1.0, -1.0], [-1.0, 1.0], [-2.0, -2.0]])
        rep = check_kkt(g, [0.5, 0.5, 0.0], [0.5, 0.5])
        assert rep.verdict is KktVerdict.FAIL and rep.min_slack == pytest.approx(-2.0)

    def test_dominated_strict_with_slack_two(self):
        rep = check_kkt(make_bilinear(DOMINATED), [0.5, 0.5, 0.0], [0.5, 0.5])
        assert rep.verdict is KktVerdict.PASS_STRICT
        assert rep.min_slack == pytest.approx(2.0)

    def test_invalid_point(self, pennies):
        with pytest.raises(InvalidInputError):
            check_kkt(pennies, [0.7, 0.7], [0.5, 0.5])

    def test_to_dict_keys(self, pennies):
        d = check_kkt(pennies, [0.5, 0.5], [0.5, 0.5]).to_dict()
        assert set(d) == {"verdict", "max_equality_residual", "min_slack", "support_x", "support_y"}
        assert d["verdict"] == "pass_strict"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 5))
    def test_permutation_invariance(self, seed, n, m):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, m))
        x, y = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        if seed % 2:
            x, y, *_ = solve_bilinear(A)
        pr, pc = rng.permutation(n), rng.permutation(m)
        a = check_kkt(make_bilinear(A), x, y)
        b = check_kkt(make_bilinear(A[np.ix_(pr, pc)]), x[pr], y[pc])
        assert a.verdict == b.verdict
        assert a.max_equality_residual == pytest.approx(b.max_equality_residual, abs=1e-12)
        assert sorted(pr[b.support_x]) == a.support_x
        assert sorted(pc[b.support_y]) == a.support_y


class TestSolveBilinear:
    def test_pennies(self):
        x, y, v, unique = solve_bilinear(PENNIES)
        np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(y, [0.5, 0.5], atol=1e-15)
        assert v == pytest.approx(0.0, abs=1e-15) and unique

    def test_rps(self):
        x, y, v, unique = solve_bilinear(RPS)
        np.testing.assert_allclose(x, np.ones(3) / 3, atol=1e-14)
        np.testing.assert_allclose(y, np.ones(3) / 3, atol=1e-14)
        assert v == pytest.approx(0.0, abs=1e-14)

    def test_dominated_row(self):
        sol = solve_bilinear(DOMINATED)
        np.testing.assert_allclose(sol.x, [0.5, 0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(sol.y, [0.5, 0.5], atol=1e-15)
        assert sol.value == pytest.approx(0.0, abs=1e-15)
        rep = check_kkt(make_bilinear(DOMINATED), sol.x, sol.y)
        assert rep.verdict is KktVerdict.PASS_STRICT and rep.min_slack == pytest.approx(2.0)

    def test_random_games_against_highs(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            n, m = rng.integers(1, 11, size=2)
            A = rng.standard_normal((n, m))
            sol = solve_bilinear(A)
            game = make_bilinear(A)
            assert check_kkt(game, sol.x, sol.y, tol=1e-7).equalities_hold
            assert duality_gap(game, sol.x, sol.y) <= 1e-8
            assert sol.value == pytest.approx(lp_value(A), abs=1e-8)

    def test_non_unique_flag(self):
        # every pure pair is an equilibrium of the zero game
        sol = solve_bilinear(np.zeros((2, 3)))
        assert not sol.unique_hint
        assert duality_gap(make_bilinear(np.zeros((2, 3))), sol.x, sol.y) == 0.0

    def test_constant_shift(self):
        a = solve_bilinear(RPS)
        b = solve_bilinear(RPS + 5.0)
        assert b.value == pytest.approx(a.value + 5.0, abs=1e-12)

    def test_bad_input(self):
        with pytest.raises(InvalidGameError):
            solve_bilinear([[np.nan]])

    def test_pivot_cap(self):
        A = np.random.default_rng(0).standard_normal((8, 8))
        with pytest.raises(SolverFailure) as info:
            solve_bilinear(A, max_pivots=1)
        assert info.value.iterations == 1


class TestDualityGap:
    def test_pennies_hand_value(self, pennies):
        assert duality_gap(pennies, [0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.2, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_at_equilibrium(self, seed):
        g = make_planted_game(4, 5, 0.5, seed)
        assert abs(duality_gap(g, *g.known_equilibrium)) <= 1e-9

    def test_quadratic_equilibrium(self):
        g = make_quadratic_example()
        assert abs(duality_gap(g, [0.0, 1.0], [0.0, 1.0])) <= 1e-9

    def test_quadratic_closed_form(self):
        # brute-force grid over the one free coordinate of each player
        g = make_quadratic_example()
        a, b = 0.3, 0.6
        hi = max(a * a - t * t + 2 * a * t for t in np.linspace(0, 1, 100_001))
        lo = min(s * s - b * b + 2 * s * b for s in np.linspace(0, 1, 100_001))
        res = duality_gap_detail(g, [a, 1 - a], [b, 1 - b])
        assert not res.approximate
        assert res.gap == pytest.approx(hi - lo, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_nonnegative(self, seed, alpha):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((3, 4))
        g = make_regularized_bilinear(A, alpha)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert duality_gap(g, rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(4))) >= -1e-12

    def test_approximate_flag_warns(self):
        g = make_regularized_bilinear(PENNIES, 0.5)
        with pytest.warns(RuntimeWarning):
            duality_gap(g, [0.9, 0.1], [0.2, 0.8], max_iter=1)
        assert duality_gap_detail(g, [0.9, 0.1], [0.2, 0.8], max_iter=1).approximate

    def test_gap_l1_consistency(self):
        game = make_random_bilinear(4, 4, 21)
        sol = solve_bilinear(game.payoff)
        assert sol.unique_hint
        traj = run(game, "omwu", 0.5, DynamicsState.start(np.ones(4) / 4, np.ones(4) / 4),
                   StopRule(1e-7, "l1", 200_000), reference=(sol.x, sol.y),
                   metrics=("l1", "gap"), stride=100)
        rows = traj.metrics
        assert rows[-1].l1_error <= 1e-7
        assert rows[-1].duality_gap <= 1e-5
        # gap is Lipschitz in the iterate with constant 2 max|A|
        bound = 2 * np.abs(game.payoff).max()
        assert all(r.duality_gap <= bound * r.l1_error + 1e-12 for r in rows)


def test_support_threshold():
    np.testing.assert_array_equal(support(np.array([0.5, 1e-10, 0.5 - 1e-10])), [0, 2])
