"""Optimal self-defense investment under full and partial insurance coverage.

Full coverage: an isolated user (case 1), cooperating users who internalize the
contagion externality (case 2) and selfish users playing a Nash game (case 3).
Partial coverage with a deductible: an isolated user (case A) and the
non-cooperative contagion game (case B).

All equilibria searched are symmetric: every user picks the same scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .model import (
    DomainError,
    InvestmentCostFunction,
    MarketParams,
    NumericalFailure,
    X_MAX,
)
from .oracle import grid_argmax

FOC_TOL = 1e-8
FIXED_POINT_TOL = 1e-10
SCAN_POINTS = 100_000
DAMPING = 0.5
MAX_ITER = 10_000


class Boundary(str, Enum):
    INTERIOR = "Interior"
    ZERO = "ZeroInvestment"
    FULL = "FullElimination"


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class InvestmentSolution:
    x_star: float
    p_star: float
    objective_value: float
    boundary: Boundary
    foc_residual: float
    second_derivative: float = math.nan
    # best improvement a unilateral deviation found on the oracle grid
    deviation_gain: float = 0.0


@dataclass(frozen=True)
class EquilibriumSet:
    equilibria: tuple
    selected: int = 0

    @property
    def count(self) -> int:
        return len(self.equilibria)

    @property
    def canonical(self) -> InvestmentSolution:
        return self.equilibria[self.selected]


@dataclass(frozen=True)
class ComparisonReport:
    x_case1: float
    x_case2: float
    x_case3: float
    x_case3_all: tuple
    lemma1_holds: bool
    lemma2_holds: bool
    lemma3_holds: Optional[bool]
    lemma3_precondition: bool
    threshold: float


def lemma3_threshold(n: int) -> float:
    """``1 - (1/n)^(1/(n-1))``; below it cooperation beats isolation."""
    if n < 2:
        raise DomainError("threshold needs n >= 2")
    return 1.0 - (1.0 / n) ** (1.0 / (n - 1))


# -- full coverage -------------------------------------------------------------

def _others(params: MarketParams, x):
    return (1.0 - params.risk.p(x)) ** (params.n - 1)


def _foc1(params, x):
    return -1.0 - params.risk.dp(x) * params.R


def _foc2(params, x):
    return -1.0 - params.n * params.risk.dp(x) * _others(params, x) * params.R


def _foc3(params, x):
    return -1.0 - params.risk.dp(x) * _others(params, x) * params.R


def _polish_root(f: Callable[[float], float], a: float, b: float) -> float:
    x = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(x)


def _scan_roots(f: Callable, hi: float, points: int = SCAN_POINTS):
    """All sign changes of ``f`` on ``(0, hi]``, each refined by bracketing.

    Returns ``(roots, kinds)`` where kind is -1 for a +/- crossing (local max of
    the integrated objective) and +1 for -/+.
    """
    xs = np.linspace(0.0, hi, points + 1)
    vals = f(xs)
    s = np.sign(vals)
    down = np.nonzero((s[:-1] > 0) & (s[1:] <= 0))[0]
    up = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    found = []
    for i, kind in [(i, -1) for i in down] + [(i, 1) for i in up]:
        a, b = xs[i], xs[i + 1]
        if vals[i + 1] == 0.0:
            r = float(b)
        else:
            r = _polish_root(lambda t: float(f(t)), a, b)
        found.append((r, kind))
    found.sort()
    return [r for r, _ in found], [k for _, k in found]


def _scan_limit(params: MarketParams, weight: float) -> Optional[float]:
    """Upper end for root scans: past it ``weight * R * |p'| < 1`` so no root exists."""
    xr = params.risk.slope_root(1.0 / (weight * params.R))
    if xr is None:
        return None
    return min(X_MAX, xr * 1.001 + 1e-9)


def _interior_or_full(params, x, foc_value, objective_value, d2, gain=0.0):
    boundary = Boundary.INTERIOR
    if x >= X_MAX:
        boundary = Boundary.FULL
    return InvestmentSolution(
        x_star=float(x),
        p_star=float(params.risk.p(x)),
        objective_value=float(objective_value),
        boundary=boundary,
        foc_residual=float(foc_value),
        second_derivative=float(d2),
        deviation_gain=gain,
    )


def solve_case1(params: MarketParams) -> InvestmentSolution:
    """Isolated user with full cover: maximize ``w0 - x - p(x) R``."""
    rf, R = params.risk, params.R

    def wealth(x):
        return params.w0 - x - rf.p(x) * R

    if float(rf.dp(0.0)) * R >= -1.0:
        return InvestmentSolution(0.0, rf.p0, float(wealth(0.0)), Boundary.ZERO,
                                  float(_foc1(params, 0.0)), float(-rf.d2p(0.0) * R))
    hi = _scan_limit(params, 1.0)
    if hi is None or _foc1(params, hi) >= 0:
        raise NumericalFailure("case 1: no sign change on [0, x_max]")
    x = _polish_root(lambda t: float(_foc1(params, t)), 0.0, hi)
    return _interior_or_full(params, x, _foc1(params, x), wealth(x), -rf.d2p(x) * R)


def _symmetric_social_wealth(params, x):
    q = 1.0 - params.risk.p(x)
    return params.w0 - x - (1.0 - q ** params.n) * params.R


def _social_d2(params, x):
    """Own-coordinate second partial of aggregate wealth at a symmetric point."""
    return -params.n * params.risk.d2p(x) * _others(params, x) * params.R


def solve_case2(params: MarketParams) -> InvestmentSolution:
    """Cooperative users maximizing aggregate wealth, restricted to symmetric profiles.

    Every local maximum along the symmetric path is found by a root scan of the
    FOC; the best of those and ``x = 0`` is returned.
    """
    if params.n == 1:
        return solve_case1(params)
    candidates = [0.0]
    hi = _scan_limit(params, params.n)
    if hi is not None:
        roots, kinds = _scan_roots(lambda t: _foc2(params, t), hi)
        candidates += [r for r, k in zip(roots, kinds) if k < 0]
    values = [float(_symmetric_social_wealth(params, x)) for x in candidates]
    best = int(np.argmax(values))
    x = candidates[best]
    if best == 0:
        return InvestmentSolution(0.0, params.risk.p0, values[0], Boundary.ZERO,
                                  float(_foc2(params, 0.0)), float(_social_d2(params, 0.0)))
    return _interior_or_full(params, x, _foc2(params, x), values[best], _social_d2(params, x))


def _nash_payoff(params, x_own, x_sym):
    """Wealth of one user deviating to ``x_own`` while everyone else plays ``x_sym``."""
    others = _others(params, x_sym)
    return params.w0 - x_own - (1.0 - (1.0 - params.risk.p(x_own)) * others) * params.R


def _deviation_gain(params, x_sym, hi):
    upper = max(hi, 2.0 * x_sym, 1.0)
    _, best = grid_argmax(lambda y: _nash_payoff(params, y, x_sym), 0.0, upper,
                          steps=20_000, refine_levels=2)
    return max(0.0, best - float(_nash_payoff(params, x_sym, x_sym)))


def solve_case3(params: MarketParams, verify: bool = True) -> EquilibriumSet:
    """All symmetric pure-strategy Nash equilibria of the selfish investment game.

    Sorted by investment; the canonical one is the smallest.
    """
    if params.n == 1:
        return EquilibriumSet((solve_case1(params),))
    rf, R = params.risk, params.R
    xs = []
    if _foc3(params, 0.0) <= 0.0:
        xs.append(0.0)
    hi = _scan_limit(params, 1.0)
    if hi is not None:
        roots, _ = _scan_roots(lambda t: _foc3(params, t), hi)
        xs += [r for r in roots if r > 0.0]
    if not xs:
        raise NumericalFailure("case 3: no equilibrium found")
    scan_hi = hi if hi is not None else 1.0
    sols = []
    for x in sorted(xs):
        gain = _deviation_gain(params, x, scan_hi) if verify else 0.0
        value = float(_nash_payoff(params, x, x))
        d2 = float(-rf.d2p(x) * _others(params, x) * R)
        if x == 0.0:
            sols.append(InvestmentSolution(0.0, rf.p0, value, Boundary.ZERO,
                                           float(_foc3(params, 0.0)), d2, gain))
        else:
            sols.append(_interior_or_full(params, x, _foc3(params, x), value, d2, gain))
    return EquilibriumSet(tuple(sols))


def compare_cases(params: MarketParams, tol: float = 1e-8) -> ComparisonReport:
    if params.n < 2:
        raise DomainError("comparison needs n >= 2")
    s1, s2, s3 = solve_case1(params), solve_case2(params), solve_case3(params)
    x1, x2 = s1.x_star, s2.x_star
    x3_all = tuple(e.x_star for e in s3.equilibria)
    thr = lemma3_threshold(params.n)
    pre = params.risk.p0 < thr
    return ComparisonReport(
        x_case1=x1,
        x_case2=x2,
        x_case3=s3.canonical.x_star,
        x_case3_all=x3_all,
        lemma1_holds=all(x3 <= x1 + tol for x3 in x3_all),
        lemma2_holds=all(x3 <= x2 + tol for x3 in x3_all),
        lemma3_holds=(x2 >= x1 - tol) if pre else None,
        lemma3_precondition=pre,
        threshold=thr,
    )


# -- partial coverage ----------------------------------------------------------

def _check_deductible(params, D, allow_uninsured=False):
    upper_ok = D <= params.R if allow_uninsured else D < params.R
    if not (0.0 < D and upper_ok):
        raise DomainError(f"deductible must lie in (0, R), got D={D}")


def solve_partialA(params: MarketParams, cost: InvestmentCostFunction, D: float) -> InvestmentSolution:
    """Isolated user under a deductible, choosing its loss probability directly.

    Maximizes ``U(w0 - x(p0 - p) - p (R - D))``; with U increasing this is the
    wealth argument, so the quadratic cost gives a closed form.
    """
    _check_deductible(params, D)
    p0, margin = params.risk.p0, params.R - D
    dp = min(max((margin - cost.c1) / (2.0 * cost.c2), 0.0), p0)
    p = p0 - dp
    w = params.w0 - cost.cost(dp) - p * margin
    if dp == 0.0:
        boundary = Boundary.ZERO
    elif p == 0.0:
        boundary = Boundary.FULL
    else:
        boundary = Boundary.INTERIOR
    # derivative of the wealth argument with respect to p
    foc = float(cost.dcost(dp) - margin)
    uprime = float(params.util.du(w - params.w0 + params.R))
    return InvestmentSolution(
        x_star=float(cost.cost(dp)),
        p_star=float(p),
        objective_value=float(params.util.normalized(w, params.w0 - params.R)),
        boundary=boundary,
        foc_residual=foc * uprime,
        second_derivative=-float(cost.d2cost(dp)) * uprime,
    )


@dataclass(frozen=True)
class _DeductibleGame:
    """Payoff of one user choosing ``p_i`` while the other ``n - 1`` play ``p``."""

    params: MarketParams
    cost: InvestmentCostFunction
    D: float

    @property
    def w_ref(self):
        return self.params.w0 - self.params.R

    def _parts(self, p_i, p):
        pr = self.params
        q = (1.0 - p) ** (pr.n - 1)
        loss_prob = 1.0 - (1.0 - p_i) * q
        dp = pr.risk.p0 - p_i
        W = pr.w0 - self.cost.cost(dp) - loss_prob * (pr.R - self.D)
        return q, loss_prob, dp, W

    def payoff(self, p_i, p):
        u = self.params.util
        _, P, _, W = self._parts(p_i, p)
        return (1.0 - P) * u.normalized(W, self.w_ref) + P * u.normalized(W - self.D, self.w_ref)

    def dpayoff(self, p_i, p):
        u, pr = self.params.util, self.params
        q, P, dp, W = self._parts(p_i, p)
        hi, lo = W - self.w_ref, W - self.D - self.w_ref
        dW = self.cost.dcost(dp) - q * (pr.R - self.D)
        marg = (1.0 - P) * u.du(hi) + P * u.du(lo)
        return q * (u.u(lo) - u.u(hi)) + marg * dW

    def d2payoff(self, p_i, p):
        u, pr = self.params.util, self.params
        q, P, dp, W = self._parts(p_i, p)
        hi, lo = W - self.w_ref, W - self.D - self.w_ref
        dW = self.cost.dcost(dp) - q * (pr.R - self.D)
        marg = (1.0 - P) * u.du(hi) + P * u.du(lo)
        curv = (1.0 - P) * u.d2u(hi) + P * u.d2u(lo)
        return 2.0 * q * (u.du(lo) - u.du(hi)) * dW + curv * dW ** 2 - marg * self.cost.d2cost(dp)

    def best_response(self, p):
        p0 = self.params.risk.p0
        grid = np.linspace(0.0, p0, 401)
        vals = self.payoff(grid, p)
        i = int(np.argmax(vals))
        best_p, best_v = float(grid[i]), float(vals[i])
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        f = lambda t: float(self.dpayoff(t, p))
        for a, b in ((lo, grid[i]), (grid[i], hi)):
            if b > a and f(a) * f(b) < 0:
                r = _polish_root(f, a, b)
                v = float(self.payoff(r, p))
                if v >= best_v:
                    best_p, best_v = r, v
        return best_p

    def symmetric_foc(self, p):
        return float(self.dpayoff(p, p))


def _solve_deductible_game(params, cost, D, starts=None, verify=True) -> EquilibriumSet:
    game = _DeductibleGame(params, cost, D)
    p0 = params.risk.p0
    starts = starts if starts is not None else (p0, p0 / 2.0, 0.0)
    finals, fixed = [], []
    for s in starts:
        p = float(s)
        for _ in range(MAX_ITER):
            nxt = (1.0 - DAMPING) * p + DAMPING * game.best_response(p)
            if abs(nxt - p) < FIXED_POINT_TOL:
                p = nxt
                break
            p = nxt
        else:
            finals.append(p)
            continue
        fixed.append(_polish_fixed_point(game, p))
    if not fixed:
        raise ConvergenceError(f"best-response iteration did not converge; final iterates {finals}")
    distinct = []
    for p in sorted(fixed):
        if not distinct or abs(p - distinct[-1]) > 1e-8:
            distinct.append(p)
    sols = [_deductible_solution(game, p, verify) for p in distinct]
    sols.sort(key=lambda s: s.x_star)
    return EquilibriumSet(tuple(sols))


def _polish_fixed_point(game, p):
    p0 = game.params.risk.p0
    # damped iteration only creeps towards a corner; accept the corner itself
    # when it maps to itself
    for corner in (0.0, p0):
        if abs(p - corner) < 1e-8 and game.best_response(corner) == corner:
            return corner
    f = game.symmetric_foc
    for width in (1e-9, 1e-7, 1e-5, 1e-3):
        a, b = max(p - width, 0.0), min(p + width, p0)
        if f(a) * f(b) < 0:
            return _polish_root(f, a, b)
    return p


def _deductible_solution(game, p, verify):
    pr, cost = game.params, game.cost
    p0 = pr.risk.p0
    dp = p0 - p
    if p == p0:
        boundary = Boundary.ZERO
    elif p == 0.0:
        boundary = Boundary.FULL
    else:
        boundary = Boundary.INTERIOR
    value = float(game.payoff(p, p))
    gain = 0.0
    if verify:
        grid = np.linspace(0.0, p0, int(round(p0 / 1e-4)) + 1)
        gain = max(0.0, float(np.max(game.payoff(grid, p))) - value)
    return InvestmentSolution(
        x_star=float(cost.cost(dp)),
        p_star=float(p),
        objective_value=value,
        boundary=boundary,
        foc_residual=game.symmetric_foc(p),
        second_derivative=float(game.d2payoff(p, p)),
        deviation_gain=gain,
    )


def solve_partialB(params: MarketParams, cost: InvestmentCostFunction, D: float,
                   verify: bool = True) -> EquilibriumSet:
    """Symmetric equilibria of the contagion game under deductible ``D``.

    Users pick their loss probability; the fair premium ``(1 - prod(1 - p_j)) (R - D)``
    moves with their own choice and they take that into account. Found by
    damped best-response iteration from ``p0``, ``p0/2`` and ``0``.
    """
    _check_deductible(params, D)
    return _solve_deductible_game(params, cost, D, verify=verify)


def solve_uninsured_game(params: MarketParams, cost: InvestmentCostFunction,
                         verify: bool = True) -> EquilibriumSet:
    """The contagion game with no insurance at all (deductible equal to ``R``)."""
    return _solve_deductible_game(params, cost, params.R, verify=verify)
