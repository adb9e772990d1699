"""Independent checks: brute-force grid argmax, FOC residuals, Monte Carlo wealth.

Nothing in here calls the solvers. The FOC residuals are written out from the
risk function's derivatives directly so they can audit the solver outputs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Contract, DomainError, MarketParams, expected_wealth

MC_CHUNK = 1 << 16


def _as_box(lower, upper, steps):
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape:
        raise DomainError("lower and upper must have the same dimension")
    if np.any(lo >= hi):
        raise DomainError("need lower < upper in every dimension")
    st = np.broadcast_to(np.atleast_1d(np.asarray(steps, dtype=int)), lo.shape)
    if np.any(st < 100):
        raise DomainError("need at least 100 steps per dimension")
    return lo, hi, st


def _scan(objective, axes, vectorized):
    mesh = np.meshgrid(*axes, indexing="ij")
    if vectorized:
        vals = np.asarray(objective(*mesh), dtype=float)
        vals = np.broadcast_to(vals, mesh[0].shape)
    else:
        vals = np.empty(mesh[0].shape)
        for idx in np.ndindex(vals.shape):
            vals[idx] = objective(*(m[idx] for m in mesh))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = tuple(int(i[0]) for i in np.nonzero(bad))
        point = tuple(float(ax[i]) for ax, i in zip(axes, idx))
        raise FloatingPointError(f"objective not finite at grid point {point}")
    return vals


def grid_argmax(objective: Callable, lower, upper, steps=10_000, refine_levels: int = 2,
                vectorized: bool = True):
    """Dense scan of a box followed by ``refine_levels`` zooms of x10.

    ``objective`` takes one argument per dimension. With ``vectorized`` it is
    called once on the whole meshgrid. Returns ``(arg, value)``; ``arg`` is a
    float for 1-D boxes and a tuple otherwise. Ties go to the first grid point.
    """
    lo, hi, st = _as_box(lower, upper, steps)
    axes = [np.linspace(a, b, int(s) + 1) for a, b, s in zip(lo, hi, st)]
    h = (hi - lo) / st
    vals = _scan(objective, axes, vectorized)
    idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best = np.array([ax[i] for ax, i in zip(axes, idx)])
    best_val = float(vals[idx])
    for _ in range(refine_levels):
        axes = [np.clip(np.linspace(b - hh, b + hh, 21), a, c)
                for b, hh, a, c in zip(best, h, lo, hi)]
        h = h / 10.0
        vals = _scan(objective, axes, vectorized)
        idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
        if vals[idx] > best_val:
            best = np.array([ax[i] for ax, i in zip(axes, idx)])
            best_val = float(vals[idx])
    if best.size == 1:
        return float(best[0]), best_val
    return tuple(float(b) for b in best), best_val


def foc_residual(case_id, params: MarketParams, x: float) -> float:
    """Left-hand side of a full-coverage investment FOC at the symmetric point ``x``.

    ``case_id`` is 1 (isolated user), 2 (cooperative) or 3 (Nash).
    """
    if x < 0:
        raise DomainError("x must be non-negative")
    rf, R, n = params.risk, params.R, params.n
    if rf.family.value == "Exponential":
        p = rf.p0 * math.exp(-rf.rate * x)
        slope = -rf.rate * p
    else:
        p = rf.p0 * (1.0 + x) ** (-rf.rate)
        slope = -rf.rate * p / (1.0 + x)
    others = (1.0 - p) ** (n - 1)
    key = str(case_id).lower().removeprefix("case")
    if key == "1":
        return -1.0 - slope * R
    if key == "2":
        return -1.0 - n * slope * others * R
    if key == "3":
        return -1.0 - slope * others * R
    raise DomainError(f"unknown case id {case_id!r}")


# -- Monte Carlo ---------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, trial, user):
    """Uniform in [0, 1) addressed by ``(seed, trial, user)``; no generator state."""
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        z = _mix64(key ^ (np.asarray(trial, dtype=np.uint64) * _GOLDEN))
        z = _mix64(z + np.asarray(user, dtype=np.uint64) * _M2)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class McReport:
    mean: float
    std_error: float
    trials: int
    analytic: float
    z_score: float
    seed: int


def _count_losses(args):
    probs, seed, start, stop = args
    trials = np.arange(start, stop, dtype=np.uint64)
    hit = np.zeros(stop - start, dtype=bool)
    for j, pj in enumerate(probs):
        hit |= counter_uniform(seed, trials, j) < pj
    return int(np.count_nonzero(hit))


def monte_carlo_wealth(params: MarketParams, x_vec: Sequence[float], contract: Contract,
                       trials: int = 1_000_000, seed: int = 0, user_index: int = 0,
                       workers: int = 1) -> McReport:
    """Simulate the joint-loss event and compare mean wealth with the closed form.

    Every user draws an independent loss with probability ``p(x_j)``; user
    ``user_index`` suffers the loss if anyone does (perfect spread). Wealth is
    ``w0 - x_i - z`` minus the uncovered part ``R - c`` on a loss.
    """
    if trials < 10_000:
        raise DomainError("need at least 10^4 trials")
    x = np.asarray(x_vec, dtype=float)
    probs = [float(params.risk.p(xj)) for xj in x]
    bounds = list(range(0, trials, MC_CHUNK)) + [trials]
    jobs = [(probs, seed, a, b) for a, b in zip(bounds, bounds[1:])]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_count_losses, jobs))
    else:
        parts = [_count_losses(j) for j in jobs]
    # wealth is two-valued, so the loss count is a sufficient statistic and
    # merging chunk results is exact integer addition
    hits = sum(parts)
    no_loss = params.w0 - x[user_index] - contract.z
    loss = no_loss - (params.R - contract.c)
    mean = (hits * loss + (trials - hits) * no_loss) / trials
    var = hits * (trials - hits) / trials * (loss - no_loss) ** 2 / (trials - 1)
    se = math.sqrt(var / trials)
    analytic = expected_wealth(params, list(x), contract, user_index)
    if se == 0.0:
        z = 0.0 if math.isclose(mean, analytic, rel_tol=0, abs_tol=1e-9) else math.copysign(math.inf, mean - analytic)
    else:
        z = (mean - analytic) / se
    return McReport(mean=mean, std_error=se, trials=trials, analytic=analytic, z_score=z, seed=seed)
