"""Optimal (premium, coverage) contracts for a single insurer with full information.

Users are spread uniformly over loss probabilities ``p`` in ``[0, 1]`` and
value a contract through the piecewise utility with risk-aversion degree ``K``.
A user buys when ``p >= p_low = z / (K c)``; the insurer refuses users above the
break-even probability ``p_high = z / c``. All integrands are linear in ``p``,
so welfare and profit have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import Contract, DomainError, NumericalFailure

TIE_TOL = 1e-9


class Objective(str, Enum):
    WELFARE = "WelfareMax"
    PROFIT = "ProfitMax"


@dataclass(frozen=True)
class ContractSolution:
    contract: Contract
    p_low: float
    p_high: float
    total_welfare: float
    insurer_profit: float
    objective: Objective


def participation_bounds(z: float, c: float, K: float):
    """``(p_low, p_high)``: the band of loss probabilities that ends up insured."""
    if c <= 0:
        raise DomainError("coverage must be positive")
    if z < 0 or K < 1:
        raise DomainError("need z >= 0 and K >= 1")
    return min(z / (K * c), 1.0), min(z / c, 1.0)


def _bounds(z, c, K):
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    safe_c = np.where(c > 0, c, 1.0)
    # zero coverage: nobody is insured; p_low = p_high keeps the band empty
    empty = np.where(z > 0, 1.0, 0.0)
    p_low = np.where(c > 0, np.minimum(z / (K * safe_c), 1.0), empty)
    p_high = np.where(c > 0, np.minimum(z / safe_c, 1.0), empty)
    return p_low, p_high


def _evaluate(w, R, K, z, c):
    pL, pH = _bounds(z, c, K)
    A = (pH - pL) * (w - z) - K * (R - c) * (pH ** 2 - pL ** 2) / 2.0
    B = pL * w - K * R * pL ** 2 / 2.0
    C = w * (1.0 - pH) - K * R * (1.0 - pH ** 2) / 2.0
    profit = z * (pH - pL) - c * (pH ** 2 - pL ** 2) / 2.0
    return A + B + C, profit, pL, pH


def evaluate_contract(w: float, R: float, K: float, z: float, c: float) -> dict:
    """Total user welfare and insurer profit of offering ``(z, c)`` to everyone."""
    if not 0 <= c <= R:
        raise DomainError(f"coverage must lie in [0, R], got {c}")
    if z < 0:
        raise DomainError("premium must be non-negative")
    if not R < w:
        raise DomainError("need R < w")
    if K < 1:
        raise DomainError("need K >= 1")
    tw, profit, pL, pH = _evaluate(w, R, K, z, c)
    return {
        "total_welfare": float(tw),
        "insurer_profit": float(profit),
        "p_low": float(pL),
        "p_high": float(pH),
    }


def uninsured_welfare(w: float, R: float, K: float) -> float:
    return w - K * R / 2.0


def _solution(w, R, K, z, c, objective):
    ev = evaluate_contract(w, R, K, z, c)
    return ContractSolution(Contract(z, c), ev["p_low"], ev["p_high"], ev["total_welfare"],
                            ev["insurer_profit"], objective)


def _agree(name, closed, numeric, tol=1e-12):
    if abs(closed - numeric) > tol * max(1.0, abs(closed)):
        raise NumericalFailure(f"{name}: closed form {closed!r} != integral {numeric!r}")


def welfare_contract(w: float, R: float, K: float) -> ContractSolution:
    """Welfare-maximizing insurer: full cover at premium ``R``."""
    if K < 1 or not R < w:
        raise DomainError("need K >= 1 and R < w")
    sol = _solution(w, R, K, R, R, Objective.WELFARE)
    _agree("welfare TW", w - R * (2 * K - 1) / (2 * K), sol.total_welfare)
    _agree("welfare profit", R * (K - 1) ** 2 / (2 * K ** 2), sol.insurer_profit)
    _agree("welfare p_low", 1.0 / K, sol.p_low)
    return sol


def profit_contract(w: float, R: float, K: float) -> ContractSolution:
    """Monopolist insurer: full cover at premium ``R K^2 / (2K - 1)``."""
    if K < 1 or not R < w:
        raise DomainError("need K >= 1 and R < w")
    z = R * K ** 2 / (2 * K - 1)
    sol = _solution(w, R, K, z, R, Objective.PROFIT)
    _agree("profit", R * (K - 1) ** 2 / (2 * (2 * K - 1)), sol.insurer_profit)
    _agree("profit TW", w - R * K ** 2 * (3 * K - 2) / (2 * (2 * K - 1) ** 2), sol.total_welfare)
    _agree("profit p_low", K / (2 * K - 1), sol.p_low)
    return sol


def welfare_gap(R: float, K: float) -> float:
    """Welfare lost to users when the insurer maximizes profit instead of welfare."""
    if K < 1:
        raise DomainError("need K >= 1")
    return R / 2.0 * (K ** 2 * (3 * K - 2) / (2 * K - 1) ** 2 - (2 * K - 1) / K)


def _surplus_and_profit(R, K, z, c):
    """User surplus over the uninsured baseline and insurer profit, elementwise."""
    pL, pH = _bounds(z, c, K)
    band, band2 = pH - pL, pH ** 2 - pL ** 2
    return K * c * band2 / 2.0 - z * band, z * band - c * band2 / 2.0


def _preferred(z, c):
    """Index of the tie-break winner: largest coverage, then the premium closest
    to the break-even rate ``z = c``, then the smaller premium."""
    return int(np.lexsort((z, np.abs(z - c), -c))[0])


def numeric_contract_argmax(w: float, R: float, K: float, objective, resolution: int = 2000,
                            refine_levels: int = 2, chunk_rows: int = 512) -> ContractSolution:
    """Brute-force contract search over premiums ``[0, max(1.5R, KR)]`` and coverage ``[0, R]``.

    Welfare: maximize total welfare with non-negative profit and the fairness
    cap ``z <= R``. Profit: maximize profit with welfare no worse than with no
    insurance. Premiums above ``K R`` sell nothing, hence the box. Grid step
    ``R / resolution`` followed by ``refine_levels`` zooms of x10. Values within
    a relative ``1e-9`` count as ties (the whole grid ties when ``K = 1``).
    """
    objective = Objective(objective)
    if K < 1 or not 0 < R < w:
        raise DomainError("need K >= 1 and 0 < R < w")
    step = R / resolution
    z_hi = max(1.5 * R, K * R)

    def score(z, c):
        surplus, profit = _surplus_and_profit(R, K, z, c)
        if objective is Objective.WELFARE:
            # total welfare = uninsured welfare + surplus
            return surplus, (profit >= -1e-12) & (z <= R * (1 + 1e-12))
        return profit, surplus >= -1e-9 * w

    zs = np.linspace(0.0, z_hi, int(round(z_hi / step)) + 1)
    cs = np.linspace(0.0, R, resolution + 1)[None, :]
    blocks = [zs[i:i + chunk_rows, None] for i in range(0, zs.size, chunk_rows)]

    tops = []
    for zb in blocks:
        vals, ok = score(zb, cs)
        tops.append(float(np.max(vals, where=ok, initial=-np.inf)))
    top = max(tops)
    if not np.isfinite(top):
        raise NumericalFailure("no feasible contract on the grid")
    tol = TIE_TOL * max(1.0, abs(top))
    cand_z, cand_c = [], []
    for zb, block_top in zip(blocks, tops):
        if block_top < top - tol:
            continue
        vals, ok = score(zb, cs)
        tied = ok & (vals >= top - tol)
        Z, C = np.broadcast_arrays(zb, cs)
        k = _preferred(Z[tied], C[tied])
        cand_z.append(Z[tied][k])
        cand_c.append(C[tied][k])
    k = _preferred(np.array(cand_z), np.array(cand_c))
    bz, bc, best = float(cand_z[k]), float(cand_c[k]), top

    h = step
    for _ in range(refine_levels):
        Z, C = np.meshgrid(np.clip(np.linspace(bz - h, bz + h, 21), 0.0, z_hi),
                           np.clip(np.linspace(bc - h, bc + h, 21), 0.0, R), indexing="ij")
        vals, ok = score(Z, C)
        if np.any(ok):
            i = int(np.argmax(np.where(ok, vals, -np.inf)))
            if vals.flat[i] > best + tol:
                bz, bc, best = float(Z.flat[i]), float(C.flat[i]), float(vals.flat[i])
        h /= 10.0
    return _solution(w, R, K, bz, bc, objective)
