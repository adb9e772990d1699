"""Batch front end: ``cyberinsure <config> [--output DIR] [--seed N] [--trials N]``.

Writes ``report.csv`` and ``report.json`` (plus ``series_<axis>.csv`` for
sweeps) and exits with 0 on success, 2 when a model property check fails and 1
on configuration or usage errors. Sweep points run in worker processes;
``SOLVER_THREADS`` caps their number.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import asym, contracts, invest
from .config import ConfigError, ExperimentConfig, load_config
from .model import (Contract, DomainError, InvestmentCostFunction, MarketParams, RiskFunction,
                    UtilityFunction)
from .oracle import monte_carlo_wealth

EXIT_OK, EXIT_CONFIG, EXIT_PROPERTY = 0, 1, 2
FOC_TOL = 1e-8
MC_BAND = 4.0


@dataclass
class Result:
    rows: List[dict]
    records: list
    # scalar columns that describe the run as a whole (one sweep row)
    metrics: Dict[str, object] = field(default_factory=dict)
    # model properties; None means not applicable
    checks: Dict[str, object] = field(default_factory=dict)


# -- building domain objects from a config -------------------------------------


def _risk(cfg, p0=None, rate=None):
    p0 = cfg.get("p0") if p0 is None else p0
    if cfg.get("family") == "exp":
        return RiskFunction.exponential(p0, cfg.get("lambda") if rate is None else rate)
    return RiskFunction.power(p0, cfg.get("gamma") if rate is None else rate)


def _util(cfg):
    if cfg.get("utility") == "cara":
        return UtilityFunction.cara(cfg.get("aversion"))
    return UtilityFunction.linear()


def _market(cfg):
    return MarketParams(n=int(cfg.get("n")), w0=cfg.get("w0"), R=cfg.get("R"), risk=_risk(cfg),
                        util=_util(cfg), theta=cfg.get("theta"))


def _pair(cfg):
    lc = _risk(cfg, cfg.get("p0_lc"), cfg.get("rate_lc"))
    hc = _risk(cfg, cfg.get("p0_hc"), cfg.get("rate_hc"))
    return asym.RiskClassPair(lc, hc, cfg.get("theta"))


# -- commands ------------------------------------------------------------------


def _solution_row(label, sol: invest.InvestmentSolution, **extra):
    return {"case": label, "x_star": sol.x_star, "p_star": sol.p_star,
            "objective": sol.objective_value, "boundary": sol.boundary,
            "foc_residual": sol.foc_residual, "second_derivative": sol.second_derivative,
            "deviation_gain": sol.deviation_gain, **extra}


def _foc_ok(sol):
    if sol.boundary is not invest.Boundary.INTERIOR:
        return True
    return abs(sol.foc_residual) < FOC_TOL and sol.second_derivative < 0


def run_invest(cfg: ExperimentConfig, workers: int = 1) -> Result:
    params = _market(cfg)
    s1, s2, s3 = invest.solve_case1(params), invest.solve_case2(params), invest.solve_case3(params)
    rows = [_solution_row("case1", s1, equilibria=1), _solution_row("case2", s2, equilibria=1)]
    rows += [_solution_row("case3", e, equilibria=s3.count) for e in s3.equilibria]
    records = [s1, s2, s3]
    sols = [s1, s2, *s3.equilibria]
    metrics = {"x_case1": s1.x_star, "x_case2": s2.x_star, "x_case3": s3.canonical.x_star,
               "case3_equilibria": s3.count}
    checks = {}
    if params.n >= 2:
        rep = invest.compare_cases(params)
        records.append(rep)
        rows.append({"case": "lemmas", "lemma1": rep.lemma1_holds, "lemma2": rep.lemma2_holds,
                     "lemma3": rep.lemma3_holds, "lemma3_precondition": rep.lemma3_precondition,
                     "threshold": rep.threshold})
        checks.update(lemma1=rep.lemma1_holds, lemma2=rep.lemma2_holds, lemma3=rep.lemma3_holds)
    if cfg.has("D"):
        cost = InvestmentCostFunction(cfg.get("c1"), cfg.get("c2"))
        D = cfg.get("D")
        sa = invest.solve_partialA(params, cost, D)
        sb = invest.solve_partialB(params, cost, D)
        rows.append(_solution_row("caseA", sa, equilibria=1))
        rows += [_solution_row("caseB", e, equilibria=sb.count) for e in sb.equilibria]
        records += [sa, sb]
        sols += [sa, *sb.equilibria]
        metrics.update(x_caseA=sa.x_star, x_caseB=sb.canonical.x_star, p_caseB=sb.canonical.p_star)
    checks["foc_audit"] = all(_foc_ok(s) for s in sols)
    return Result(rows, records, metrics, checks)


def run_contract(cfg: ExperimentConfig, workers: int = 1) -> Result:
    w = cfg.get("w") if cfg.has("w") else cfg.get("w0")
    R, K = cfg.get("R"), cfg.get("K")
    sw = contracts.welfare_contract(w, R, K)
    sp = contracts.profit_contract(w, R, K)
    rows = [{"objective": s.objective, "z": s.contract.z, "c": s.contract.c, "p_low": s.p_low,
             "p_high": s.p_high, "TW": s.total_welfare, "profit": s.insurer_profit} for s in (sw, sp)]
    gap = contracts.welfare_gap(R, K)
    metrics = {"welfare_z": sw.contract.z, "welfare_TW": sw.total_welfare,
               "welfare_profit": sw.insurer_profit, "profit_z": sp.contract.z,
               "profit_TW": sp.total_welfare, "profit_profit": sp.insurer_profit, "welfare_gap": gap}
    checks = {
        "gap_matches": abs(gap - (sw.total_welfare - sp.total_welfare)) <= 1e-10 * max(1.0, w),
        "gap_nonneg": gap >= -1e-12,
        "profit_ordering": sp.insurer_profit >= sw.insurer_profit - 1e-12,
    }
    return Result(rows, [sw, sp], metrics, checks)


def _asym_row(sol: asym.AsymSolution, R):
    row = {"scenario": sol.scenario, "equilibrium": sol.equilibrium_kind, "market": sol.market}
    for name, ct in sol.contracts.items():
        row[f"z_{name}"] = ct.z
        row[f"c_{name}"] = ct.c
    row.update({"x_LC": sol.investments["LC"], "x_HC": sol.investments["HC"],
                "profit": sol.insurer_profit, "coverage": sol.coverage_kind,
                "R_minus_c": R - min(ct.c for ct in sol.contracts.values()),
                "VI": sol.value_of_information})
    return row


def run_asym(cfg: ExperimentConfig, workers: int = 1) -> Result:
    pair, util = _pair(cfg), _util(cfg)
    w0, R = cfg.get("w0"), cfg.get("R")
    sols = [asym.solve_no_info(pair, util, w0, R), asym.solve_post_contract_info(pair, util, w0, R),
            asym.solve_pre_contract_info(pair, util, w0, R)]
    fair = [asym.fair_contracts(pair, util, w0, R, s.scenario) for s in sols]
    rows = [_asym_row(s, R) for s in sols]
    rows += [dict(_asym_row(s, R), scenario=f"{s.scenario.value}_fair") for s in fair]
    no, post, pre = sols
    metrics = {}
    for s, key in zip(sols, ("noinfo", "post", "pre")):
        metrics[f"{key}_profit"] = s.insurer_profit
        metrics[f"{key}_R_minus_c"] = R - min(ct.c for ct in s.contracts.values())
        metrics[f"{key}_VI"] = s.value_of_information
        metrics[f"{key}_partial"] = s.coverage_kind is asym.CoverageKind.PARTIAL
    metrics["R_minus_c"] = metrics["noinfo_R_minus_c"]
    checks = {
        "vi_nonneg": all(s.value_of_information >= -1e-10 for s in sols),
        "post_le_noinfo": post.insurer_profit <= no.insurer_profit + 1e-8,
        "pre_le_noinfo": pre.insurer_profit <= no.insurer_profit + 1e-8,
    }
    return Result(rows, sols + fair, metrics, checks)


def run_validate(cfg: ExperimentConfig, workers: int = 1) -> Result:
    params = _market(cfg)
    if cfg.has("x"):
        x = list(cfg.get("x"))
    else:
        x = [invest.solve_case1(params).x_star] * params.n
    # no insurance unless a contract is given
    contract = Contract(cfg.get("z") or 0.0, cfg.get("c") or 0.0)
    rep = monte_carlo_wealth(params, x, contract, trials=int(cfg.get("trials")), seed=cfg.seed,
                             workers=workers)
    ok = abs(rep.z_score) <= MC_BAND
    row = {"mean": rep.mean, "std_error": rep.std_error, "trials": rep.trials,
           "analytic": rep.analytic, "z_score": rep.z_score, "seed": rep.seed, "within_band": ok}
    return Result([row], [rep], {k: v for k, v in row.items() if k != "seed"}, {"mc_within_band": ok})


COMMANDS = {"invest": run_invest, "contract": run_contract, "asym": run_asym,
            "validate": run_validate}


# -- sweeps --------------------------------------------------------------------


def _axis_values(axis):
    name, start, stop, steps = axis
    vals = np.linspace(start, stop, steps)
    if name == "n":
        return [int(round(v)) for v in vals]
    return [float(v) for v in vals]


def _sweep_point(args):
    cfg, name, value = args
    point = dataclasses.replace(cfg, params=dict(cfg.params, **{name: value}))
    res = COMMANDS[cfg.get("sweep_command")](point)
    return {name: value, **res.metrics, **res.checks}, res.checks


def _summary_row(name, rows):
    out = {name: "summary"}
    for key in rows[0]:
        vals = [r.get(key) for r in rows if isinstance(r.get(key), bool)]
        if vals:
            out[key] = f"{_cell(min(vals))}/{_cell(max(vals))}"
    return out


def run_sweep(cfg: ExperimentConfig, workers: int = 1):
    name = cfg.sweep_axis[0]
    jobs = [(cfg, name, v) for v in _axis_values(cfg.sweep_axis)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_sweep_point, jobs))
    else:
        out = [_sweep_point(j) for j in jobs]
    rows = [r for r, _ in out]
    checks = {}
    for _, ch in out:
        for k, v in ch.items():
            if v is not None:
                checks[k] = checks.get(k, True) and v
    return Result(rows + [_summary_row(name, rows)], [], {}, checks), rows


# -- reports -------------------------------------------------------------------


def _plain(obj):
    """JSON-ready copy: enums by value, non-finite floats as null."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _plain(dataclasses.asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(_plain(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(v):
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, rows):
    header = []
    for r in rows:
        header += [k for k in r if k not in header]
    lines = [",".join(header)]
    lines += [",".join(_cell(r.get(k)) for k in header) for r in rows]
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def write_json(path: Path, payload):
    text = json.dumps(_plain(payload), indent=2, allow_nan=False)
    path.write_bytes((text + "\n").encode("utf-8"))


def run(cfg: ExperimentConfig, output_dir=None, workers: int = 1) -> int:
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = None
    if cfg.command == "sweep":
        result, series = run_sweep(cfg, workers)
    else:
        result = COMMANDS[cfg.command](cfg, workers)
    write_csv(out / "report.csv", result.rows)
    write_json(out / "report.json", {
        "command": cfg.command,
        "params": cfg.params,
        "sweep_axis": cfg.sweep_axis,
        "seed": cfg.seed,
        "rows": result.rows,
        "checks": result.checks,
        "records": result.records,
    })
    if series is not None:
        write_csv(out / f"series_{cfg.sweep_axis[0]}.csv", series)
    failed = [k for k, v in result.checks.items() if v is False]
    if failed:
        print(f"property check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def _workers():
    env = os.environ.get("SOLVER_THREADS")
    if env is None:
        return os.cpu_count() or 1
    n = int(env)
    if n < 1:
        raise ValueError
    return n


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cyberinsure", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="experiment config (key = value lines)")
    ap.add_argument("--output", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="random seed (overrides seed)")
    ap.add_argument("--trials", type=int, help="Monte Carlo trials (overrides trials)")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must lie in [0, 2^64)")
            cfg.seed = args.seed
        if args.trials is not None:
            if args.trials < 10_000:
                raise ConfigError("--trials must be >= 10000")
            cfg.params["trials"] = args.trials
        try:
            workers = _workers()
        except ValueError:
            raise ConfigError("SOLVER_THREADS must be a positive integer") from None
        return run(cfg, args.output, workers)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
