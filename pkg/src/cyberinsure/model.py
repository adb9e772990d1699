"""Domain types and elementary probability / wealth computations.

Everything here is immutable and side-effect free. Risk functions map a
self-defense investment ``x`` to a loss probability; utility functions map
wealth to utility. Both carry closed-form first and second derivatives so the
solvers never need finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

X_MAX = 1.0e6
PROB_CLAMP = 1.0 - 1.0e-12


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


class NumericalFailure(RuntimeError):
    """A solver could not produce a result it is supposed to always find."""


class RiskFamily(str, Enum):
    EXPONENTIAL = "Exponential"
    POWER = "Power"


class UtilityFamily(str, Enum):
    LINEAR = "Linear"
    EXPONENTIAL_CONCAVE = "ExponentialConcave"


def _check_x(x):
    if np.any(np.asarray(x) < 0):
        raise DomainError(f"investment must be non-negative, got {x!r}")


@dataclass(frozen=True)
class RiskFunction:
    """Decreasing convex loss probability ``p(x)``.

    Exponential: ``p0 * exp(-rate * x)``; Power: ``p0 / (1 + x) ** rate``.
    Works on scalars and numpy arrays alike.
    """

    family: RiskFamily
    p0: float
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "family", RiskFamily(self.family))
        if not 0.0 < self.p0 <= 1.0:
            raise DomainError(f"p0 must lie in (0, 1], got {self.p0}")
        if not self.rate > 0.0:
            raise DomainError(f"rate must be positive, got {self.rate}")

    @classmethod
    def exponential(cls, p0: float, lam: float) -> "RiskFunction":
        return cls(RiskFamily.EXPONENTIAL, p0, lam)

    @classmethod
    def power(cls, p0: float, gamma: float) -> "RiskFunction":
        return cls(RiskFamily.POWER, p0, gamma)

    def p(self, x):
        _check_x(x)
        if self.family is RiskFamily.EXPONENTIAL:
            return self.p0 * np.exp(-self.rate * x)
        return self.p0 * (1.0 + x) ** (-self.rate)

    def dp(self, x):
        _check_x(x)
        if self.family is RiskFamily.EXPONENTIAL:
            return -self.rate * self.p0 * np.exp(-self.rate * x)
        return -self.rate * self.p0 * (1.0 + x) ** (-self.rate - 1.0)

    def d2p(self, x):
        _check_x(x)
        if self.family is RiskFamily.EXPONENTIAL:
            return self.rate ** 2 * self.p0 * np.exp(-self.rate * x)
        return self.rate * (self.rate + 1.0) * self.p0 * (1.0 + x) ** (-self.rate - 2.0)

    def inverse(self, prob: float) -> float:
        """Investment needed to bring the loss probability down to ``prob``."""
        if not 0.0 < prob <= self.p0:
            raise DomainError(f"probability {prob} not reachable from p0={self.p0}")
        if self.family is RiskFamily.EXPONENTIAL:
            return math.log(self.p0 / prob) / self.rate
        return (self.p0 / prob) ** (1.0 / self.rate) - 1.0

    def slope_root(self, target: float) -> Optional[float]:
        """Smallest ``x >= 0`` with ``-p'(x) <= target``; None if already at 0.

        ``-p'`` is strictly decreasing, so this is the unique crossing.
        """
        if -float(self.dp(0.0)) <= target:
            return None
        if self.family is RiskFamily.EXPONENTIAL:
            return math.log(self.rate * self.p0 / target) / self.rate
        return (self.rate * self.p0 / target) ** (1.0 / (self.rate + 1.0)) - 1.0


def risk_prob(rf: RiskFunction, x: float) -> float:
    """``p(x)`` for a scalar investment; negative ``x`` is a domain error."""
    return float(rf.p(x))


@dataclass(frozen=True)
class UtilityFunction:
    """Wealth utility. ``ExponentialConcave`` is ``(1 - exp(-a w)) / a``."""

    family: UtilityFamily = UtilityFamily.LINEAR
    aversion: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", UtilityFamily(self.family))
        if self.aversion < 0:
            raise DomainError("aversion must be non-negative")
        if self.family is UtilityFamily.EXPONENTIAL_CONCAVE and self.aversion == 0:
            raise DomainError("ExponentialConcave needs a positive aversion; use Linear")

    @classmethod
    def linear(cls) -> "UtilityFunction":
        return cls(UtilityFamily.LINEAR, 0.0)

    @classmethod
    def cara(cls, a: float) -> "UtilityFunction":
        return cls(UtilityFamily.EXPONENTIAL_CONCAVE, a)

    @property
    def a(self) -> float:
        return self.aversion if self.family is UtilityFamily.EXPONENTIAL_CONCAVE else 0.0

    def u(self, w):
        if self.a == 0:
            return np.asarray(w, dtype=float) * 1.0
        return -np.expm1(-self.a * np.asarray(w, dtype=float)) / self.a

    def du(self, w):
        if self.a == 0:
            return np.ones_like(np.asarray(w, dtype=float))
        return np.exp(-self.a * np.asarray(w, dtype=float))

    def d2u(self, w):
        if self.a == 0:
            return np.zeros_like(np.asarray(w, dtype=float))
        return -self.a * np.exp(-self.a * np.asarray(w, dtype=float))

    def normalized(self, w, w_ref: float):
        """``(u(w) - u(w_ref)) / u'(w_ref)``: same preferences, O(1) values near ``w_ref``.

        The raw exponential utility saturates at ``1/a`` for realistic wealth
        levels, so every comparison in the solvers goes through this form.
        """
        return self.u(np.asarray(w, dtype=float) - w_ref)

    def certainty_loss(self, loss, prob):
        """Certainty-equivalent of a lottery losing ``loss`` with probability ``prob``.

        Wealth-independent for both families (no wealth effects under CARA).
        """
        loss = np.asarray(loss, dtype=float)
        prob = np.asarray(prob, dtype=float)
        if self.a == 0:
            return prob * loss
        return np.log1p(prob * np.expm1(self.a * loss)) / self.a


@dataclass(frozen=True)
class PiecewiseInsuranceUtility:
    """Valuation ``U_p(z, c)`` of a user with risk-aversion degree ``K``."""

    w: float
    K: float
    R: float

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f"K must be >= 1, got {self.K}")
        if not 0 < self.R < self.w:
            raise DomainError("need 0 < R < w")

    def uninsured(self, p):
        return self.w - p * self.K * self.R

    def insured(self, p, z, c):
        return self.w - z - p * self.K * (self.R - c)


@dataclass(frozen=True)
class Contract:
    """Premium ``z`` paid for coverage ``c``."""

    z: float
    c: float

    def __post_init__(self):
        if self.z < 0:
            raise DomainError(f"premium must be non-negative, got {self.z}")
        if self.c < 0:
            raise DomainError(f"coverage must be non-negative, got {self.c}")

    def deductible(self, R: float) -> float:
        return R - self.c

    def validate(self, R: float) -> "Contract":
        if self.c > R * (1 + 1e-12):
            raise DomainError(f"coverage {self.c} exceeds risk size {R}")
        return self


@dataclass(frozen=True)
class InvestmentCostFunction:
    """Cost of cutting the loss probability by ``dp``: ``c1*dp + c2*dp**2``."""

    c1: float
    c2: float

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise DomainError("cost coefficients must be positive")

    def cost(self, dp):
        return self.c1 * dp + self.c2 * dp * dp

    def dcost(self, dp):
        return self.c1 + 2.0 * self.c2 * dp

    def d2cost(self, dp):
        return 2.0 * self.c2 + 0.0 * dp


@dataclass(frozen=True)
class MarketParams:
    n: int = 1
    w0: float = 100.0
    R: float = 10.0
    risk: RiskFunction = field(default_factory=lambda: RiskFunction.exponential(0.5, 1.0))
    util: UtilityFunction = field(default_factory=UtilityFunction.linear)
    theta: float = 0.5
    risk_lc: Optional[RiskFunction] = None
    risk_hc: Optional[RiskFunction] = None
    binv: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n}")
        if not 0 < self.R < self.w0:
            raise DomainError(f"need 0 < R < w0, got R={self.R}, w0={self.w0}")
        if not 0 <= self.theta <= 1:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")
        if self.binv < 0:
            raise DomainError("binv must be non-negative")
        if (self.risk_lc is None) != (self.risk_hc is None):
            raise DomainError("risk_lc and risk_hc must be given together")
        if self.risk_lc is not None:
            check_class_order(self.risk_lc, self.risk_hc)


def check_class_order(lc: RiskFunction, hc: RiskFunction, grid_points: int = 2001,
                      x_hi: float = X_MAX) -> None:
    """High-chance class must be strictly riskier than low-chance on a test grid."""
    xs = np.concatenate([[0.0], np.geomspace(1e-6, x_hi, grid_points - 1)])
    plc, phc = lc.p(xs), hc.p(xs)
    # both vanish at the far end of the grid; compare where they are resolvable
    live = phc > 1e-300
    if not np.all(phc[live] > plc[live]):
        bad = xs[live][np.argmax(~(phc[live] > plc[live]))]
        raise DomainError(f"p_hc(x) <= p_lc(x) at x={bad:g}")
    if np.any(phc >= 1.0):
        raise DomainError("class probabilities must stay below 1")


def joint_loss_prob(x_vec: Sequence[float], rf: RiskFunction) -> float:
    """Probability that a user suffers the loss under perfect spread."""
    x = np.asarray(x_vec, dtype=float)
    if x.size == 0:
        raise DomainError("need at least one user")
    _check_x(x)
    p = np.clip(rf.p(x), 0.0, PROB_CLAMP)
    return float(-np.expm1(np.sum(np.log1p(-p))))


def expected_final_wealth(params: MarketParams, x_vec: Sequence[float], contract: Contract,
                          user_index: int) -> float:
    """``w0 - x_i - P c - R + c`` with the premium ``P c`` set at the joint loss rate.

    With full coverage (``c = R``) this is ``w0 - x_i - P R``. The formula is
    not the uninsured wealth when ``c = 0``; use :func:`uninsured_expected_wealth`.
    """
    if not 0 <= user_index < params.n or user_index >= len(x_vec):
        raise DomainError(f"user index {user_index} out of range")
    contract.validate(params.R)
    P = joint_loss_prob(x_vec, params.risk)
    c = contract.c
    return params.w0 - x_vec[user_index] - P * c - params.R + c


def expected_wealth(params: MarketParams, x_vec: Sequence[float], contract: Contract,
                    user_index: int) -> float:
    """Mean wealth when the contract's own premium ``z`` is charged up front.

    ``w0 - x_i - z - P (R - c)``. Agrees with :func:`expected_final_wealth`
    when the contract is full cover at the fair rate ``z = P R``.
    """
    if not 0 <= user_index < params.n or user_index >= len(x_vec):
        raise DomainError(f"user index {user_index} out of range")
    contract.validate(params.R)
    P = joint_loss_prob(x_vec, params.risk)
    return params.w0 - x_vec[user_index] - contract.z - P * (params.R - contract.c)


def uninsured_expected_wealth(params: MarketParams, x_vec: Sequence[float], user_index: int) -> float:
    P = joint_loss_prob(x_vec, params.risk)
    return params.w0 - x_vec[user_index] - P * params.R
