"""Contracts under moral hazard and adverse selection with two risk classes.

Users belong to a low-chance (LC) or high-chance (HC) class. The insurer sees
neither the class nor the self-defense investment ``x``, so it prices contracts
anticipating each user's best response.

Wealth accounting: the premium is paid in both states and the investment is a
sunk cost, so final wealth is ``w0 - z - x`` without a loss and
``w0 - z - x - (R - c)`` with one. The insurer earns ``z - p(x) c``. For both
utility families the user's problem reduces to minimizing

    J(x; D) = x + L(D, p(x))

where ``L`` is the certainty-equivalent loss of a deductible ``D = R - c``
(no wealth effects). ``x*`` therefore depends only on ``c``. The highest
premium a user accepts is ``phi(R) - phi(D)`` with ``phi(D) = min_x J(x; D)``,
which turns the search over ``(z, c)`` into an exact search over ``c``.

Expected utilities are reported normalized at ``w_ref = w0 - R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np
from scipy.optimize import brentq

from .invest import Boundary, InvestmentSolution
from .model import Contract, DomainError, RiskFunction, UtilityFunction, X_MAX

FULL_TOL = 1e-6
GRID_DIV = 500
REFINE_LEVELS = 2
X_GRID = 257
PROFIT_TOL = 1e-12
DEVIATION_STEPS = 100_000


class Scenario(str, Enum):
    NO_INFO = "NoInfo"
    POST = "PostContractInfo"
    PRE = "PreContractInfo"


class CoverageKind(str, Enum):
    FULL = "Full"
    PARTIAL = "Partial"


class EquilibriumKind(str, Enum):
    POOLING = "Pooling"
    SEPARATING = "Separating"


class SlopeOrder(str, Enum):
    # 0 > p'_LC > p'_HC: investment is more effective for the high-chance class
    HC_STEEPER = "hc_steeper"
    # p'_LC < p'_HC: investment is more effective for the low-chance class
    LC_STEEPER = "lc_steeper"


@dataclass(frozen=True)
class RiskClassPair:
    p_lc: RiskFunction
    p_hc: RiskFunction
    theta: float = 0.5
    slope_order: Optional[SlopeOrder] = None
    # the slope ordering is only checked on [0, slope_x_max]: a strict LC_STEEPER
    # ordering cannot hold on all of [0, inf) since p_HC - p_LC > 0 decays to 0
    slope_x_max: float = X_MAX

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")
        if self.slope_order is not None:
            object.__setattr__(self, "slope_order", SlopeOrder(self.slope_order))
        xs = np.concatenate([[0.0], np.geomspace(1e-6, X_MAX, 2000)])
        plc, phc = self.p_lc.p(xs), self.p_hc.p(xs)
        if np.any(phc >= 1.0) or np.any(plc >= 1.0):
            raise DomainError("class probabilities must stay below 1")
        if not self.identical:
            live = phc > 1e-300
            if not np.all(phc[live] > plc[live]):
                bad = xs[live][np.argmax(~(phc[live] > plc[live]))]
                raise DomainError(f"p_hc(x) <= p_lc(x) at x={bad:g}")
            if self.slope_order is not None:
                sx = xs[live & (xs <= self.slope_x_max)]
                dlc, dhc = self.p_lc.dp(sx), self.p_hc.dp(sx)
                ok = dlc > dhc if self.slope_order is SlopeOrder.HC_STEEPER else dlc < dhc
                if not np.all(ok):
                    bad = sx[np.argmax(~ok)]
                    raise DomainError(f"slope ordering {self.slope_order.value} fails at x={bad:g}")

    @property
    def identical(self) -> bool:
        return self.p_lc == self.p_hc


class BlendedRisk:
    """``p_alpha = theta p_HC + (1 - theta) p_LC``: the risk a user faces not knowing the class."""

    def __init__(self, pair: RiskClassPair):
        self.pair = pair

    def p(self, x):
        t = self.pair.theta
        return t * self.pair.p_hc.p(x) + (1.0 - t) * self.pair.p_lc.p(x)

    def dp(self, x):
        t = self.pair.theta
        return t * self.pair.p_hc.dp(x) + (1.0 - t) * self.pair.p_lc.dp(x)

    def d2p(self, x):
        t = self.pair.theta
        return t * self.pair.p_hc.d2p(x) + (1.0 - t) * self.pair.p_lc.d2p(x)


def blended_risk(pair: RiskClassPair, x):
    if np.any(np.asarray(x) < 0):
        raise DomainError("investment must be non-negative")
    return BlendedRisk(pair).p(x)


@dataclass(frozen=True)
class AsymSolution:
    scenario: Scenario
    contracts: Dict[str, Contract]
    investments: Dict[str, float]
    insurer_profit: float
    coverage_kind: CoverageKind
    value_of_information: float
    equilibrium_kind: EquilibriumKind
    # False when no contract earns a positive profit (the no-insurance outcome)
    market: bool = True
    user_welfare: Dict[str, float] = field(default_factory=dict)


# -- the user's problem ------------------------------------------------------


def _loss_slope(util: UtilityFunction, D, p):
    """d L(D, p) / dp and its p-derivative."""
    a = util.a
    if a == 0:
        return D + 0.0 * p, 0.0 * p
    e = math.expm1(a * D)
    g = e / (a * (1.0 + p * e))
    return g, -a * g * g


class _User:
    """Best responses and certainty costs of one risk profile, cached by deductible."""

    def __init__(self, risk, util: UtilityFunction, R: float):
        self.risk, self.util, self.R = risk, util, R
        self._cache = {}

    def J(self, x, D):
        return x + self.util.certainty_loss(D, self.risk.p(x))

    def dJ(self, x, D):
        g, _ = _loss_slope(self.util, D, self.risk.p(x))
        return 1.0 + self.risk.dp(x) * g

    def d2J(self, x, D):
        p = self.risk.p(x)
        g, gp = _loss_slope(self.util, D, p)
        return self.risk.d2p(x) * g + self.risk.dp(x) ** 2 * gp

    def best(self, D: float):
        """``(x*, phi(D))``; smallest minimizer on ties."""
        D = float(min(max(D, 0.0), self.R))
        hit = self._cache.get(D)
        if hit is not None:
            return hit
        if D == 0.0:
            out = (0.0, 0.0)
        else:
            # J(x) >= x and J(0) <= D, so nothing beyond J(0) can win
            hi = float(self.J(0.0, D))
            xs = np.linspace(0.0, hi, X_GRID)
            d = self.dJ(xs, D)
            cands = [0.0] if d[0] >= 0 else []
            # local minima: J' crosses from negative to non-negative
            for i in np.nonzero((d[:-1] < 0) & (d[1:] >= 0))[0]:
                a, b = xs[i], xs[i + 1]
                cands.append(b if d[i + 1] == 0 else brentq(self.dJ, a, b, args=(D,), xtol=1e-15))
            if d[-1] < 0:
                cands.append(hi)
            vals = [float(self.J(x, D)) for x in cands]
            k = int(np.argmin(vals))
            out = (float(cands[k]), vals[k])
        self._cache[D] = out
        return out

    def phi(self, D):
        return self.best(D)[1]

    def eu(self, contract: Contract, x):
        """Expected utility normalized at ``w0 - R`` (wealth offsets only matter)."""
        x = np.asarray(x, dtype=float)
        p = self.risk.p(x)
        good = self.R - contract.z - x
        bad = good - (self.R - contract.c)
        return p * self.util.u(bad) + (1.0 - p) * self.util.u(good)


def _solution_for(user: _User, contract: Contract, verify: bool = True) -> InvestmentSolution:
    D = contract.deductible(user.R)
    x, _ = user.best(D)
    gain = 0.0
    if verify:
        # J(x) >= x > R >= J(0) beyond R, so scanning [0, R] covers [0, x_max]
        xs = np.linspace(0.0, user.R, DEVIATION_STEPS + 1)
        gain = max(0.0, float(np.max(user.eu(contract, xs)) - user.eu(contract, x)))
    interior = x > 0.0
    return InvestmentSolution(
        x_star=x,
        p_star=float(user.risk.p(x)),
        objective_value=float(user.eu(contract, x)),
        boundary=Boundary.INTERIOR if interior else Boundary.ZERO,
        # derivatives of -J, the certainty-equivalent objective being maximized
        foc_residual=-float(user.dJ(x, D)) if D > 0 else -1.0,
        second_derivative=-float(user.d2J(x, D)) if interior else math.nan,
        deviation_gain=gain,
    )


def _check_market(util, w0, R):
    if not 0 < R < w0:
        raise DomainError(f"need 0 < R < w0, got R={R}, w0={w0}")


def _check_contract(contract: Contract, R: float):
    contract.validate(R)


def user_best_investment(contract: Contract, p, util: UtilityFunction, w0: float, R: float,
                         verify: bool = True) -> InvestmentSolution:
    """Investment maximizing expected utility of final wealth under ``contract``.

    ``p`` is a :class:`RiskFunction` or a :class:`BlendedRisk`. The objective is
    scanned on a grid and each local minimum of ``J`` polished by a root of
    ``J'``; this also handles objectives that are not unimodal.
    ``deviation_gain`` is the best improvement found on a dense grid.
    """
    _check_market(util, w0, R)
    _check_contract(contract, R)
    return _solution_for(_User(p, util, R), contract, verify)


# -- value of information ----------------------------------------------------


def _users(pair, util, R):
    return _User(pair.p_lc, util, R), _User(pair.p_hc, util, R), _User(BlendedRisk(pair), util, R)


def _vi(pair, lc, hc, blend, c_lc: Contract, c_hc: Contract):
    """Informed minus uninformed expected utility; the uninformed user takes ``c_lc``."""
    t = pair.theta
    x_lc, _ = lc.best(c_lc.deductible(lc.R))
    x_hc, _ = hc.best(c_hc.deductible(hc.R))
    x_a, _ = blend.best(c_lc.deductible(lc.R))
    informed = t * hc.eu(c_hc, x_hc) + (1.0 - t) * lc.eu(c_lc, x_lc)
    # U_alpha is linear in the loss probability: it is the theta-mixture of the class utilities
    uninformed = t * hc.eu(c_lc, x_a) + (1.0 - t) * lc.eu(c_lc, x_a)
    return float(informed - uninformed)


def value_of_information_post(contract: Contract, pair: RiskClassPair, util: UtilityFunction,
                              w0: float, R: float) -> float:
    """Expected-utility gain of learning one's class before investing, under ``contract``.

    ``theta U_HC(C, x_HC) + (1 - theta) U_LC(C, x_LC) - U_alpha(C, x_alpha)``.
    Non-negative because each class's own best response beats the blended one.
    """
    _check_market(util, w0, R)
    _check_contract(contract, R)
    if pair.identical or pair.theta in (0.0, 1.0):
        return 0.0
    lc, hc, blend = _users(pair, util, R)
    return max(_vi(pair, lc, hc, blend, contract, contract), 0.0)


# -- coverage search ---------------------------------------------------------


def _coverage_kind(*contracts):
    full = all(ct.c >= ct_R - FULL_TOL for ct, ct_R in contracts)
    return CoverageKind.FULL if full else CoverageKind.PARTIAL


def _search_c(R, score):
    """Maximize ``score(c) -> (value, z)`` over a coverage grid with two x10 zooms.

    Ties within ``PROFIT_TOL`` go to the lexicographically smallest ``(z, c)``.
    """
    h = R / GRID_DIV
    cs = np.linspace(0.0, R, GRID_DIV + 1)
    best = None
    for level in range(REFINE_LEVELS + 1):
        for c in cs:
            v, z = score(float(c))
            cand = (v, z, float(c))
            if best is None or v > best[0] + PROFIT_TOL or (
                    v >= best[0] - PROFIT_TOL and (z, c) < (best[1], best[2])):
                best = cand
        if level < REFINE_LEVELS:
            cs = np.unique(np.clip(np.linspace(best[2] - h, best[2] + h, 21), 0.0, R))
            h /= 10.0
    return best


def _pooling_solution(scenario, pair, util, R, users, best, fair=False):
    lc, hc, blend = users
    value, z, c = best
    market = fair or value > PROFIT_TOL
    if not market:
        z, c, value = 0.0, 0.0, 0.0
    ct = Contract(max(z, 0.0), c)
    D = R - c
    if scenario is Scenario.NO_INFO:
        xa = blend.best(D)[0]
        inv = {"LC": xa, "HC": xa}
    else:
        inv = {"LC": lc.best(D)[0], "HC": hc.best(D)[0]}
    vi = 0.0 if pair.identical or pair.theta in (0.0, 1.0) else max(_vi(pair, lc, hc, blend, ct, ct), 0.0)
    welfare = {"LC": float(lc.eu(ct, inv["LC"])), "HC": float(hc.eu(ct, inv["HC"]))}
    return AsymSolution(scenario, {"pool": ct}, inv, float(value), _coverage_kind((ct, R)), vi,
                        EquilibriumKind.POOLING, market, welfare)


def solve_no_info(pair: RiskClassPair, util: UtilityFunction, w0: float, R: float) -> AsymSolution:
    """Profit-maximizing pooling contract when nobody knows the class.

    Users invest against the blended risk. For each coverage the premium is
    set where participation binds, which is optimal because ``x*`` does not
    depend on the premium.
    """
    _check_market(util, w0, R)
    users = _users(pair, util, R)
    blend = users[2]
    phi_R = blend.phi(R)

    def score(c):
        x, phi = blend.best(R - c)
        z = phi_R - phi
        return z - float(blend.risk.p(x)) * c, z

    return _pooling_solution(Scenario.NO_INFO, pair, util, R, users, _search_c(R, score))


def _post_score(pair, lc, hc, R):
    t = pair.theta
    phi_lc, phi_hc = lc.phi(R), hc.phi(R)

    def terms(c):
        x_lc, f_lc = lc.best(R - c)
        x_hc, f_hc = hc.best(R - c)
        z = min(phi_lc - f_lc, phi_hc - f_hc)
        payout = (t * float(hc.risk.p(x_hc)) + (1.0 - t) * float(lc.risk.p(x_lc))) * c
        return z, payout, t * f_hc + (1.0 - t) * f_lc

    return terms


def solve_post_contract_info(pair: RiskClassPair, util: UtilityFunction, w0: float, R: float) -> AsymSolution:
    """Pooling contract when users learn their class after signing but before investing.

    Each class best-responds with its own risk; both classes must participate.
    """
    _check_market(util, w0, R)
    users = _users(pair, util, R)
    terms = _post_score(pair, users[0], users[1], R)

    def score(c):
        z, payout, _ = terms(c)
        return z - payout, z

    return _pooling_solution(Scenario.POST, pair, util, R, users, _search_c(R, score))


# -- separating contracts ----------------------------------------------------


def _pair_premiums(P_lc, P_hc, d_lc, d_hc):
    """Largest premiums meeting participation (``z_i <= P_i``) and incentive
    compatibility (``z_i - z_j <= d_i``); feasible iff ``d_lc + d_hc >= 0``."""
    z_lc = np.minimum(P_lc, P_hc + d_lc)
    z_hc = np.minimum(P_hc, P_lc + d_hc)
    ok = (d_lc + d_hc >= -PROFIT_TOL) & (z_lc >= 0.0) & (z_hc >= 0.0)
    return z_lc, z_hc, ok


class _PairTable:
    """Class best responses tabulated over a coverage axis."""

    def __init__(self, lc, hc, R, cs):
        self.cs = np.asarray(cs, dtype=float)
        D = R - self.cs
        b_lc = [lc.best(d) for d in D]
        b_hc = [hc.best(d) for d in D]
        self.x_lc = np.array([b[0] for b in b_lc])
        self.f_lc = np.array([b[1] for b in b_lc])
        self.x_hc = np.array([b[0] for b in b_hc])
        self.f_hc = np.array([b[1] for b in b_hc])
        self.q_lc = lc.risk.p(self.x_lc)
        self.q_hc = hc.risk.p(self.x_hc)


def _pre_grid(pair, lc, hc, R, cs_lc, cs_hc, fair):
    """Objective over the product grid ``cs_lc x cs_hc`` (rows LC, columns HC)."""
    t = pair.theta
    A = _PairTable(lc, hc, R, cs_lc)
    B = _PairTable(lc, hc, R, cs_hc)
    phi_lc, phi_hc = lc.phi(R), hc.phi(R)
    # LC quantities vary along rows, HC quantities along columns
    f_lc_own = A.f_lc[:, None]
    f_hc_own = B.f_hc[None, :]
    f_lc_other = B.f_lc[None, :]
    f_hc_other = A.f_hc[:, None]
    cost_lc = (A.q_lc * A.cs)[:, None]
    cost_hc = (B.q_hc * B.cs)[None, :]
    if fair:
        z_lc = np.broadcast_to(cost_lc, (A.cs.size, B.cs.size))
        z_hc = np.broadcast_to(cost_hc, z_lc.shape)
        ok = ((z_lc + f_lc_own <= phi_lc + PROFIT_TOL) & (z_hc + f_hc_own <= phi_hc + PROFIT_TOL)
              & (z_lc + f_lc_own <= z_hc + f_lc_other + PROFIT_TOL)
              & (z_hc + f_hc_own <= z_lc + f_hc_other + PROFIT_TOL))
        # users' certainty equivalent cost, negated to maximize
        value = -(t * (z_hc + f_hc_own) + (1.0 - t) * (z_lc + f_lc_own))
    else:
        z_lc, z_hc, ok = _pair_premiums(phi_lc - f_lc_own, phi_hc - f_hc_own,
                                        f_lc_other - f_lc_own, f_hc_other - f_hc_own)
        value = t * (z_hc - cost_hc) + (1.0 - t) * (z_lc - cost_lc)
    return np.where(ok, value, -np.inf), z_lc, z_hc


def _pre_search(pair, lc, hc, R, fair):
    h = R / GRID_DIV
    cs_lc = cs_hc = np.linspace(0.0, R, GRID_DIV + 1)
    best = None
    for level in range(REFINE_LEVELS + 1):
        val, z_lc, z_hc = _pre_grid(pair, lc, hc, R, cs_lc, cs_hc, fair)
        top = float(np.max(val))
        if np.isfinite(top):
            tied = np.argwhere(val >= top - PROFIT_TOL)
            # lexicographic tie-break on (z, c) of the LC contract, then the HC one
            keys = [(float(z_lc[i, j]), float(cs_lc[i]), float(z_hc[i, j]), float(cs_hc[j]))
                    for i, j in tied]
            k = min(range(len(keys)), key=keys.__getitem__)
            cand = (top,) + keys[k]
            if best is None or cand[0] > best[0] + PROFIT_TOL:
                best = cand
        if best is None:
            break
        if level < REFINE_LEVELS:
            cs_lc = np.unique(np.clip(np.linspace(best[2] - h, best[2] + h, 21), 0.0, R))
            cs_hc = np.unique(np.clip(np.linspace(best[4] - h, best[4] + h, 21), 0.0, R))
            h /= 10.0
    return best


def _separating_solution(pair, util, R, users, best, fair):
    lc, hc, blend = users
    if best is None or (not fair and best[0] <= PROFIT_TOL):
        value, c_lc, c_hc = 0.0, Contract(0.0, 0.0), Contract(0.0, 0.0)
        market = False
    else:
        value, z1, c1, z2, c2 = best
        c_lc, c_hc, market = Contract(max(z1, 0.0), c1), Contract(max(z2, 0.0), c2), True
    x_lc = lc.best(c_lc.deductible(R))[0]
    x_hc = hc.best(c_hc.deductible(R))[0]
    if fair:
        t = pair.theta
        value = t * (c_hc.z - float(hc.risk.p(x_hc)) * c_hc.c) + (1 - t) * (c_lc.z - float(lc.risk.p(x_lc)) * c_lc.c)
    vi = 0.0 if pair.identical or pair.theta in (0.0, 1.0) else max(_vi(pair, lc, hc, blend, c_lc, c_hc), 0.0)
    welfare = {"LC": float(lc.eu(c_lc, x_lc)), "HC": float(hc.eu(c_hc, x_hc))}
    return AsymSolution(Scenario.PRE, {"LC": c_lc, "HC": c_hc}, {"LC": x_lc, "HC": x_hc},
                        float(value), _coverage_kind((c_lc, R), (c_hc, R)), vi,
                        EquilibriumKind.SEPARATING, market, welfare)


def solve_pre_contract_info(pair: RiskClassPair, util: UtilityFunction, w0: float, R: float) -> AsymSolution:
    """Separating menu ``(C_LC, C_HC)`` when users know their class before signing.

    For a pair of coverages the best premiums solve a two-variable system of
    participation and incentive constraints in closed form, so only the
    coverages are searched. Value of information compares the informed
    outcome with an uninformed user taking ``C_LC``.
    """
    _check_market(util, w0, R)
    users = _users(pair, util, R)
    return _separating_solution(pair, util, R, users, _pre_search(pair, users[0], users[1], R, False), False)


def fair_contracts(pair: RiskClassPair, util: UtilityFunction, w0: float, R: float, scenario) -> AsymSolution:
    """Zero-profit contracts that are best for users in ``scenario``.

    Premiums are actuarially fair given the anticipated investments, and the
    coverage maximizes the users' expected certainty equivalent.
    """
    _check_market(util, w0, R)
    scenario = Scenario(scenario)
    users = _users(pair, util, R)
    lc, hc, blend = users
    if scenario is Scenario.PRE:
        return _separating_solution(pair, util, R, users, _pre_search(pair, lc, hc, R, True), True)
    if scenario is Scenario.NO_INFO:
        def score(c):
            x, phi = blend.best(R - c)
            z = float(blend.risk.p(x)) * c
            if z + phi > blend.phi(R) + PROFIT_TOL:
                return -math.inf, z
            return -(z + phi), z
    else:
        terms = _post_score(pair, lc, hc, R)

        def score(c):
            z_max, payout, cost = terms(c)
            if payout > z_max + PROFIT_TOL:
                return -math.inf, payout
            return -(payout + cost), payout
    value, z, c = _search_c(R, score)
    sol = _pooling_solution(scenario, pair, util, R, users, (value, z, c), fair=True)
    # report the insurer's profit, which is zero up to rounding
    return AsymSolution(sol.scenario, sol.contracts, sol.investments, 0.0, sol.coverage_kind,
                        sol.value_of_information, sol.equilibrium_kind, True, sol.user_welfare)
