import math

import numpy as np
import pytest

from cyberinsure.invest import (Boundary, compare_cases, lemma3_threshold, solve_case1, solve_case2,
                                solve_case3, solve_partialA, solve_partialB, solve_uninsured_game)
from cyberinsure.model import (DomainError, InvestmentCostFunction, MarketParams, RiskFunction,
                               UtilityFunction)
from cyberinsure.oracle import foc_residual, grid_argmax


def _params(n=2, p0=0.5, rate=1.0, R=10.0, family="exp", util=None):
    rf = RiskFunction.exponential(p0, rate) if family == "exp" else RiskFunction.power(p0, rate)
    return MarketParams(n=n, w0=100.0, R=R, risk=rf, util=util or UtilityFunction.linear())


# -- Case 1 ------------------------------------------------------------------

def test_case1_closed_form():
    sol = solve_case1(_params(n=1))
    # x* = ln(lambda p0 R) / lambda
    assert sol.x_star == pytest.approx(math.log(5.0), abs=1e-12)
    assert sol.p_star == pytest.approx(0.1, abs=1e-12)
    assert sol.objective_value == pytest.approx(100 - math.log(5) - 1.0, abs=1e-10)
    assert round(sol.objective_value, 4) == 97.3906
    assert sol.boundary is Boundary.INTERIOR
    assert abs(sol.foc_residual) < 1e-10


def test_case1_zero_investment():
    sol = solve_case1(_params(n=1, p0=0.05))
    assert sol.boundary is Boundary.ZERO and sol.x_star == 0.0
    assert foc_residual(1, _params(n=1, p0=0.05), 0.0) <= 0


def test_case1_power_matches_grid_oracle():
    params = _params(n=1, family="power", rate=2.0)
    arg, _ = grid_argmax(lambda x: 100 - x - 0.5 * (1 + x) ** -2.0 * 10, 0.0, 20.0, steps=200_000)
    sol = solve_case1(params)
    assert sol.x_star == pytest.approx(arg, abs=1e-4)
    # regression pin, taken from the grid oracle above before the solver was trusted
    assert sol.x_star == pytest.approx(1.15443469003188, abs=1e-10)


# -- Case 2 ------------------------------------------------------------------

def test_case2_closed_form():
    sol = solve_case2(_params())
    # FOC reduces to 2 y (1 - y) R = 1 ... with y = p(x): y = (1 - sqrt(0.8)) / 2
    y = (1 - math.sqrt(0.8)) / 2
    assert sol.p_star == pytest.approx(y, abs=1e-12)
    assert sol.x_star == pytest.approx(math.log(0.5 / y), abs=1e-12)
    assert abs(foc_residual(2, _params(), sol.x_star)) < 1e-10


def test_case2_matches_two_user_oracle():
    def social(x1, x2):
        p1, p2 = 0.5 * np.exp(-x1), 0.5 * np.exp(-x2)
        return 200 - x1 - x2 - 2 * (1 - (1 - p1) * (1 - p2)) * 10

    (a, b), _ = grid_argmax(social, [0.0, 0.0], [5.0, 5.0], steps=1000)
    sol = solve_case2(_params())
    assert a == pytest.approx(sol.x_star, abs=1e-4)
    assert b == pytest.approx(sol.x_star, abs=1e-4)


def test_case2_zero_boundary():
    params = _params(n=3, p0=0.02)
    assert 3 * float(params.risk.dp(0.0)) * 0.98 ** 2 * 10 >= -1
    assert solve_case2(params).boundary is Boundary.ZERO


def test_case2_single_user_is_case1():
    assert solve_case2(_params(n=1)) == solve_case1(_params(n=1))


# -- Case 3 ------------------------------------------------------------------

def test_case3_closed_form():
    eqs = solve_case3(_params())
    assert eqs.count == 1
    y = (1 - math.sqrt(0.6)) / 2
    sol = eqs.canonical
    assert sol.p_star == pytest.approx(y, abs=1e-12)
    assert round(sol.x_star, 4) == 1.4899
    assert sol.deviation_gain <= 1e-9
    assert sol.x_star < solve_case1(_params()).x_star


def test_case3_zero_only():
    eqs = solve_case3(_params(p0=0.05))
    assert eqs.count == 1 and eqs.canonical.boundary is Boundary.ZERO


def test_case3_multiple_equilibria_sorted():
    eqs = solve_case3(_params(n=6, p0=0.82, rate=2.1, R=55.0))
    xs = [e.x_star for e in eqs.equilibria]
    assert len(xs) == 3 and xs == sorted(xs)
    assert eqs.canonical.x_star == 0.0
    for e in eqs.equilibria:
        assert e.deviation_gain <= 1e-9
        if e.boundary is Boundary.INTERIOR:
            assert abs(e.foc_residual) < 1e-8


# -- comparisons -------------------------------------------------------------

def test_lemma3_threshold():
    assert lemma3_threshold(2) == pytest.approx(0.5)
    assert lemma3_threshold(5) == pytest.approx(1 - 0.2 ** 0.25)


def test_compare_at_threshold():
    rep = compare_cases(_params())
    assert (round(rep.x_case1, 4), round(rep.x_case3, 4)) == (1.6094, 1.4899)
    assert rep.x_case2 == pytest.approx(math.log(0.5 / ((1 - math.sqrt(0.8)) / 2)), abs=1e-10)
    assert rep.lemma1_holds and rep.lemma2_holds
    assert rep.lemma3_precondition is False and rep.lemma3_holds is None


def test_compare_below_threshold():
    rep = compare_cases(_params(p0=0.4))
    assert rep.lemma3_precondition and rep.lemma3_holds
    assert rep.x_case2 >= rep.x_case1


def test_compare_needs_two_users():
    with pytest.raises(DomainError):
        compare_cases(_params(n=1))


def test_random_solutions_beat_perturbations():
    rng = np.random.default_rng(21)
    for _ in range(60):
        n = int(rng.integers(2, 11))
        fam = "exp" if rng.random() < 0.5 else "power"
        params = _params(n=n, p0=rng.uniform(0.05, 0.95), rate=rng.uniform(0.1, 5.0),
                         R=rng.uniform(1.0, 99.0), family=fam)
        rf, R = params.risk, params.R
        s1, s2, s3 = solve_case1(params), solve_case2(params), solve_case3(params)
        bumps = rng.uniform(-1.0, 1.0, size=100) * np.maximum(1.0, s1.x_star)
        for sol, value in [
            (s1, lambda x: -x - rf.p(x) * R),
            (s2, lambda x: -x - (1 - (1 - rf.p(x)) ** n) * R),
        ]:
            xs = np.maximum(sol.x_star + bumps, 0.0)
            assert np.all(value(xs) <= value(sol.x_star) + 1e-9)
        for e in s3.equilibria:
            q = (1 - rf.p(e.x_star)) ** (n - 1)
            own = lambda x: -x - (1 - (1 - rf.p(x)) * q) * R
            xs = np.maximum(e.x_star + bumps, 0.0)
            assert np.all(own(xs) <= own(e.x_star) + 1e-9)


# -- Case A ------------------------------------------------------------------

def test_partialA_example():
    sol = solve_partialA(_params(n=1, p0=0.8), InvestmentCostFunction(1.0, 5.0), 2.0)
    assert sol.p_star == pytest.approx(0.1, abs=1e-12)
    # independent scan over p with step 1e-5 of the wealth argument
    ps = np.arange(0.0, 0.8 + 1e-12, 1e-5)
    wealth = -(1.0 * (0.8 - ps) + 5.0 * (0.8 - ps) ** 2) - ps * 8.0
    assert ps[np.argmax(wealth)] == pytest.approx(sol.p_star, abs=1e-5)


def test_partialA_no_reduction_pays():
    sol = solve_partialA(_params(n=1, p0=0.8), InvestmentCostFunction(9.0, 5.0), 2.0)
    assert sol.p_star == 0.8 and sol.boundary is Boundary.ZERO


def test_partialA_full_elimination():
    sol = solve_partialA(_params(n=1, p0=0.3), InvestmentCostFunction(1.0, 5.0), 2.0)
    assert sol.p_star == 0.0 and sol.boundary is Boundary.FULL


@pytest.mark.parametrize("D", [0.0, 10.0, -1.0, 12.0])
def test_partialA_deductible_range(D):
    with pytest.raises(DomainError):
        solve_partialA(_params(n=1), InvestmentCostFunction(1.0, 5.0), D)


# -- Case B ------------------------------------------------------------------

def _br_oracle(params, cost, D, p_other, step=1e-4):
    """Brute-force best response on a p-grid, written from the payoff definition."""
    util, p0, R, n = params.util, params.risk.p0, params.R, params.n
    ps = np.arange(0.0, p0 + step / 2, step)
    loss = 1 - (1 - ps) * (1 - p_other) ** (n - 1)
    base = params.w0 - cost.cost(p0 - ps) - loss * (R - D)
    ref = params.w0 - R
    eu = (1 - loss) * util.normalized(base, ref) + loss * util.normalized(base - D, ref)
    return ps[np.argmax(eu)]


def test_partialB_pinned_fixed_point():
    params = _params(p0=0.8)
    cost = InvestmentCostFunction(1.0, 5.0)
    eqs = solve_partialB(params, cost, 2.0)
    assert eqs.count == 1
    sol = eqs.canonical
    assert sol.p_star == 0.0 and sol.boundary is Boundary.FULL
    assert _br_oracle(params, cost, 2.0, sol.p_star) == pytest.approx(sol.p_star, abs=1e-4)


def test_partialB_linear_interior():
    params = _params(p0=0.5)
    eqs = solve_partialB(params, InvestmentCostFunction(1.0, 20.0), 5.0)
    # linear payoff: symmetric FOC 1 + 40 (0.5 - p) - 10 (1 - p) = 0
    assert eqs.canonical.p_star == pytest.approx(11 / 30, abs=1e-10)
    assert abs(eqs.canonical.foc_residual) < 1e-8 and eqs.canonical.second_derivative < 0


@pytest.mark.parametrize("a, c1, c2, D, p0", [
    (0.1, 1.0, 20.0, 5.0, 0.5),
    (0.5, 2.0, 30.0, 3.0, 0.6),
    (0.1, 1.0, 40.0, 2.0, 0.8),
])
def test_partialB_cara_matches_oracle(a, c1, c2, D, p0):
    params = _params(p0=p0, util=UtilityFunction.cara(a))
    cost = InvestmentCostFunction(c1, c2)
    sol = solve_partialB(params, cost, D).canonical
    assert sol.boundary is Boundary.INTERIOR
    assert abs(sol.foc_residual) < 1e-8 and sol.second_derivative < 0
    assert _br_oracle(params, cost, D, sol.p_star) == pytest.approx(sol.p_star, abs=2e-4)


def test_partialB_single_user_closed_form():
    # one linear user: maximize -c1 dp - c2 dp^2 - p R, so dp = (R - c1) / (2 c2)
    params = _params(n=1, p0=0.8)
    sol = solve_partialB(params, InvestmentCostFunction(1.0, 20.0), 2.0).canonical
    assert sol.p_star == pytest.approx(0.8 - 9.0 / 40.0, abs=1e-10)


def test_partialB_continuity_to_uninsured():
    params = _params(p0=0.6, util=UtilityFunction.cara(0.1))
    cost = InvestmentCostFunction(1.0, 30.0)
    near = solve_partialB(params, cost, 10.0 - 1e-6).canonical.p_star
    bare = solve_uninsured_game(params, cost).canonical.p_star
    assert near == pytest.approx(bare, abs=1e-3)


def test_partialB_deductible_range():
    with pytest.raises(DomainError):
        solve_partialB(_params(), InvestmentCostFunction(1.0, 5.0), 10.0)
