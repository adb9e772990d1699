"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (collected into the
terminal summary by ``conftest.py``) and then asserts the same condition.
"""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cyberinsure.asym import (FULL_TOL, RiskClassPair, solve_no_info, solve_post_contract_info,
                              solve_pre_contract_info)
from cyberinsure.contracts import (Objective, numeric_contract_argmax, profit_contract,
                                   welfare_contract, welfare_gap)
from cyberinsure.invest import (Boundary, lemma3_threshold, solve_case1, solve_case2, solve_case3,
                                solve_partialA, solve_partialB, _scan_limit)
from cyberinsure.model import (Contract, InvestmentCostFunction, MarketParams, RiskFunction,
                               UtilityFunction)
from cyberinsure.oracle import monte_carlo_wealth

HERE = Path(__file__).parent
K_GRID = (1.0, 1.5, 2.0, 5.0)
W, R = 100.0, 10.0


def _report(n, ok, detail=""):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}{': ' + detail if detail else ''}")
    return ok


def _close(a, b, tol):
    return abs(a - b) <= tol


# -- 1, 2: contract theorems -------------------------------------------------

def _oracle_agrees(sol, num, step, value_tol=1e-3):
    return (abs(sol.contract.z - num.contract.z) <= step + 1e-12
            and abs(sol.contract.c - num.contract.c) <= step + 1e-12
            and _close(sol.total_welfare, num.total_welfare, value_tol)
            and _close(sol.insurer_profit, num.insurer_profit, value_tol))


def test_criterion_1_welfare_contract():
    t0 = time.perf_counter()
    bad = []
    for K in K_GRID:
        sol = welfare_contract(W, R, K)
        num = numeric_contract_argmax(W, R, K, Objective.WELFARE)
        ok = ((sol.contract.z, sol.contract.c) == (10.0, 10.0)
              and _close(sol.p_low, 1 / K, 1e-12)
              and _close(sol.total_welfare, 100 - 10 * (2 * K - 1) / (2 * K), 1e-10)
              and _close(sol.insurer_profit, 10 * (K - 1) ** 2 / (2 * K ** 2), 1e-10)
              and _oracle_agrees(sol, num, R / 2000))
        if not ok:
            bad.append(K)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 5.0
    _report(1, ok, f"failing K={bad}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_profit_contract():
    t0 = time.perf_counter()
    bad = []
    for K in K_GRID:
        sol = profit_contract(W, R, K)
        num = numeric_contract_argmax(W, R, K, Objective.PROFIT)
        ok = (_close(sol.contract.z, 10 * K ** 2 / (2 * K - 1), 1e-12) and sol.contract.c == 10.0
              and _close(sol.p_low, K / (2 * K - 1), 1e-12)
              and _close(sol.insurer_profit, 10 * (K - 1) ** 2 / (2 * (2 * K - 1)), 1e-10)
              and _oracle_agrees(sol, num, R / 2000))
        if not ok:
            bad.append(K)
    zero = profit_contract(W, R, 1.0).insurer_profit == 0.0
    elapsed = time.perf_counter() - t0
    ok = not bad and zero and elapsed < 5.0
    _report(2, ok, f"failing K={bad}, K=1 profit exactly 0: {zero}, {elapsed:.2f} s")
    assert ok


# -- 3: welfare gap ----------------------------------------------------------

def test_criterion_3_welfare_gap():
    ok = welfare_gap(R, 1.0) == 0.0
    for K in np.linspace(1.0, 10.0, 181)[1:]:
        wel, pro = welfare_contract(W, R, K), profit_contract(W, R, K)
        gap = welfare_gap(R, K)
        ok &= gap > 0 and _close(gap, wel.total_welfare - pro.total_welfare, 1e-10)
        ok &= pro.insurer_profit > wel.insurer_profit
    _report(3, ok, "180 values of K in (1, 10]")
    assert ok


# -- 4, 5, 6: investment games on random draws -------------------------------

def _draws(count=500, seed=1):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(2, 11))
        p0 = float(rng.uniform(0.01, 0.99))
        rate = float(rng.uniform(0.1, 5.0))
        Rd = float(rng.uniform(1.0, 99.0))
        rf = RiskFunction.exponential(p0, rate) if i % 2 == 0 else RiskFunction.power(p0, rate)
        out.append(MarketParams(n=n, w0=100.0, R=Rd, risk=rf, util=UtilityFunction.linear()))
    return out


@pytest.fixture(scope="module")
def game_draws():
    t0 = time.perf_counter()
    solved = []
    for params in _draws():
        solved.append((params, solve_case1(params), solve_case2(params),
                       solve_case3(params, verify=False)))
    return solved, time.perf_counter() - t0


def test_criterion_4_lemma_suite(game_draws):
    solved, elapsed = game_draws
    violations = 0
    for params, s1, s2, s3 in solved:
        for eq in s3.equilibria:
            violations += eq.x_star > s1.x_star + 1e-8
            violations += eq.x_star > s2.x_star + 1e-8
        if params.risk.p0 < lemma3_threshold(params.n):
            violations += s2.x_star < s1.x_star - 1e-8
    ok = violations == 0 and elapsed < 60.0
    _report(4, ok, f"{len(solved)} draws, {violations} violations, {elapsed:.1f} s")
    assert ok


def _partial_draws(count=60, seed=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        util = UtilityFunction.linear() if i % 3 == 0 else UtilityFunction.cara(float(rng.uniform(0.01, 0.3)))
        params = MarketParams(n=int(rng.integers(1, 5)), w0=100.0, R=10.0,
                              risk=RiskFunction.exponential(float(rng.uniform(0.1, 0.95)), 1.0), util=util)
        cost = InvestmentCostFunction(float(rng.uniform(0.2, 4.0)), float(rng.uniform(1.0, 30.0)))
        out.append((params, cost, float(rng.uniform(1.0, 9.0))))
    return out


def test_criterion_5_foc_audit(game_draws):
    solved, _ = game_draws
    sols = []
    for _, s1, s2, s3 in solved:
        sols += [s1, s2, *s3.equilibria]
    for params, cost, D in _partial_draws():
        sols.append(solve_partialA(params, cost, D))
        sols += list(solve_partialB(params, cost, D, verify=False).equilibria)
    interior = [s for s in sols if s.boundary is Boundary.INTERIOR]
    bad = [s for s in interior if not (abs(s.foc_residual) < 1e-8 and s.second_derivative < 0)]
    ok = not bad and len(interior) > 100
    _report(5, ok, f"{len(interior)} interior solutions, {len(bad)} failing")
    assert ok


def test_criterion_6_odd_equilibrium_count(game_draws):
    solved, _ = game_draws
    used, even = 0, 0
    for params, _, _, s3 in solved:
        xs = [e.x_star for e in s3.equilibria]
        if 0.0 in xs:
            continue
        hi = _scan_limit(params, 1.0)
        if hi is None or any(x < 1e-6 or x > hi - 1e-6 for x in xs):
            continue
        used += 1
        even += len(xs) % 2 == 0
    ok = even == 0 and used > 0
    _report(6, ok, f"{used} qualifying draws, {even} with an even count")
    assert ok


# -- 7: Monte Carlo ----------------------------------------------------------

def _mc_fixtures():
    out = []
    for i in range(20):
        n = 1 + i % 4
        rf = RiskFunction.exponential(0.2 + 0.03 * i, 0.5 + 0.1 * i) if i % 2 == 0 \
            else RiskFunction.power(0.15 + 0.035 * i, 0.8 + 0.15 * i)
        params = MarketParams(n=n, w0=100.0, R=5.0 + i, risk=rf, util=UtilityFunction.linear())
        x = [0.1 * ((i + j) % 7) for j in range(n)]
        c = params.R * (i % 5) / 4.0
        out.append((params, x, Contract(0.3 * (i % 3), c), 1000 + i))
    return out


def test_criterion_7_monte_carlo():
    worst = 0.0
    for params, x, contract, seed in _mc_fixtures():
        rep = monte_carlo_wealth(params, x, contract, trials=1_000_000, seed=seed)
        worst = max(worst, abs(rep.z_score))
    params, x, contract, seed = _mc_fixtures()[3]
    a = monte_carlo_wealth(params, x, contract, trials=1_000_000, seed=seed)
    b = monte_carlo_wealth(params, x, contract, trials=1_000_000, seed=seed, workers=4)
    same = repr(a).encode() == repr(b).encode()
    ok = worst <= 4.0 and same
    _report(7, ok, f"max |z| = {worst:.2f}, identical seeds identical reports: {same}")
    assert ok


# -- 8: information asymmetry ------------------------------------------------

SOLVERS = (solve_no_info, solve_post_contract_info, solve_pre_contract_info)


def _asym_configs(count=6, seed=8):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p_lc, p_hc = sorted(rng.uniform(0.1, 0.9, 2))
        r_hc, r_lc = sorted(rng.uniform(0.3, 2.0, 2))
        pair = RiskClassPair(RiskFunction.exponential(float(p_lc), float(r_lc)),
                             RiskFunction.exponential(float(p_hc), float(r_hc)),
                             float(rng.uniform(0.1, 0.9)))
        out.append((pair, float(rng.uniform(0.05, 3.0))))
    return out


def test_criterion_8_asymmetry_properties():
    t0 = time.perf_counter()
    lc, hc = RiskFunction.exponential(0.3, 1.0), RiskFunction.exponential(0.6, 0.5)
    desk = RiskClassPair(lc, hc, 0.5)
    sweep = (0.1, 0.5, 1.0, 2.0, 5.0)
    runs = [(desk, a, [f(desk, UtilityFunction.cara(a), W, R) for f in SOLVERS]) for a in sweep]
    runs += [(pair, a, [f(pair, UtilityFunction.cara(a), W, R) for f in SOLVERS])
             for pair, a in _asym_configs()]

    full = [(a, s.scenario.value) for _, a, sols in runs for s in sols
            if any(ct.c >= R - FULL_TOL for ct in s.contracts.values())]
    partial_ok = not full

    trend_ok = True
    for k in range(3):
        for key in runs[0][2][k].contracts:
            gaps = [R - runs[i][2][k].contracts[key].c for i in range(len(sweep))]
            trend_ok &= all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))

    vis = [s.value_of_information for _, _, sols in runs for s in sols]
    nonneg_ok = all(v >= 0.0 for v in vis)
    zero_distinct = [(a, s.scenario.value) for _, a, sols in runs for s in sols
                     if s.value_of_information == 0.0]
    degenerate = [RiskClassPair(lc, lc, 0.5), RiskClassPair(lc, hc, 0.0), RiskClassPair(lc, hc, 1.0)]
    zero_degenerate = all(f(p, UtilityFunction.cara(0.1), W, R).value_of_information == 0.0
                          for p in degenerate for f in SOLVERS)
    iff_ok = not zero_distinct and zero_degenerate

    order_ok = all(sols[2].insurer_profit <= sols[0].insurer_profit + 1e-9 for _, _, sols in runs)
    elapsed = time.perf_counter() - t0

    parts = {
        "partial coverage": partial_ok,
        "R - c* non-increasing": trend_ok,
        "VI >= 0": nonneg_ok,
        "VI = 0 iff degenerate": iff_ok,
        "separating profit <= no-info": order_ok,
        "runtime < 120 s": elapsed < 120.0,
    }
    ok = all(parts.values())
    detail = ", ".join(f"{k} {'ok' if v else 'violated'}" for k, v in parts.items())
    total = 3 * len(runs)
    detail += f"; a contract with c* = R in {len(full)}/{total} solves, VI = 0 with distinct classes in {len(zero_distinct)}/{total}"
    _report(8, ok, f"{detail}; {elapsed:.1f} s")
    assert ok


# -- 9: CLI determinism ------------------------------------------------------

def test_criterion_9_cli_determinism(tmp_path):
    diffs = []
    for name in ("invest", "contract", "asym", "sweep_K"):
        for run, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{name}-{run}"
            env = dict(os.environ, SOLVER_THREADS=str(threads))
            res = subprocess.run([sys.executable, "-m", "cyberinsure", str(HERE / "configs" / f"{name}.cfg"),
                                  "--output", str(out)], env=env, capture_output=True)
            if res.returncode != 0:
                diffs.append(f"{name} exit {res.returncode}")
                continue
            for golden in (HERE / "golden" / name).iterdir():
                if (out / golden.name).read_bytes() != golden.read_bytes():
                    diffs.append(f"{name}/{golden.name} threads={threads}")
    ok = not diffs
    _report(9, ok, f"4 configs x 3 runs, mismatches {diffs}")
    assert ok
