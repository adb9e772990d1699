"""Experiment configuration: line-oriented ``key = value`` files.

Blank lines and ``#`` comments are ignored, there are no sections and every
key must be known. Values are type-checked and range-checked as they are read
so a diagnostic can name the key and its line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

COMMANDS = ("invest", "contract", "asym", "sweep", "validate")
SWEEP_AXES = ("K", "p0", "lambda", "gamma", "n", "theta", "aversion", "D")


class ConfigError(ValueError):
    """Bad configuration; the message names the key and line when known."""


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text):
    v = int(text)
    return v


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


def _floats(text):
    return tuple(_float(t) for t in text.split(","))


def _axis(text):
    parts = [t.strip() for t in text.split(",")]
    if len(parts) != 4:
        raise ValueError("expected: name, start, stop, steps")
    name, start, stop, steps = parts
    if name not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {name!r}; one of {', '.join(SWEEP_AXES)}")
    steps = int(steps)
    if steps < 2:
        raise ValueError("sweep steps must be ≥ 2")
    return name, _float(start), _float(stop), steps


def _positive(v):
    return v > 0


def _prob(v):
    return 0 < v <= 1


def _unit(v):
    return 0 <= v <= 1


def _nonneg(v):
    return v >= 0


# key -> (parser, range check or None, description of the valid range)
SCHEMA = {
    "command": (_choice(*COMMANDS), None, ""),
    "sweep_command": (_choice("invest", "contract", "asym", "validate"), None, ""),
    "sweep_axis": (_axis, None, ""),
    "output_dir": (str, None, ""),
    "seed": (_int, lambda v: 0 <= v < 2 ** 64, "in [0, 2^64)"),
    "trials": (_int, lambda v: v >= 10_000, ">= 10000"),
    "n": (_int, lambda v: v >= 1, ">= 1"),
    "w0": (_float, _positive, "> 0"),
    "w": (_float, _positive, "> 0"),
    "R": (_float, _positive, "> 0"),
    "K": (_float, lambda v: v >= 1, ">= 1"),
    "family": (_choice("exp", "power"), None, ""),
    "p0": (_float, _prob, "in (0, 1]"),
    "lambda": (_float, _positive, "> 0"),
    "gamma": (_float, _positive, "> 0"),
    "utility": (_choice("linear", "cara"), None, ""),
    "aversion": (_float, _nonneg, ">= 0"),
    "theta": (_float, _unit, "in [0, 1]"),
    "p0_lc": (_float, _prob, "in (0, 1]"),
    "rate_lc": (_float, _positive, "> 0"),
    "p0_hc": (_float, _prob, "in (0, 1]"),
    "rate_hc": (_float, _positive, "> 0"),
    "c1": (_float, _positive, "> 0"),
    "c2": (_float, _positive, "> 0"),
    "D": (_float, _nonneg, ">= 0"),
    "x": (_floats, lambda v: all(t >= 0 for t in v), "non-negative"),
    "z": (_float, _nonneg, ">= 0"),
    "c": (_float, _nonneg, ">= 0"),
}

DEFAULTS = {
    "output_dir": "out",
    "seed": 0,
    "trials": 1_000_000,
    "n": 2,
    "w0": 100.0,
    "R": 10.0,
    "K": 1.0,
    "family": "exp",
    "p0": 0.5,
    "lambda": 1.0,
    "gamma": 1.0,
    "utility": "linear",
    "aversion": 0.0,
    "theta": 0.5,
    "p0_lc": 0.3,
    "rate_lc": 1.0,
    "p0_hc": 0.6,
    "rate_hc": 0.5,
}


@dataclass
class ExperimentConfig:
    command: str
    params: Dict[str, object] = field(default_factory=dict)
    sweep_axis: Optional[Tuple[str, float, float, int]] = None
    output_dir: str = "out"
    seed: int = 0
    # line number of every key read from the file, for diagnostics
    lines: Dict[str, int] = field(default_factory=dict)

    def get(self, key):
        return self.params.get(key, DEFAULTS.get(key))

    def has(self, key) -> bool:
        return key in self.params


def parse_config(text: str) -> ExperimentConfig:
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value', got {raw.strip()!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {no}: key {key!r} repeated (first on line {lines[key]})")
        parse, check, desc = SCHEMA[key]
        try:
            v = parse(val)
        except ValueError as exc:
            raise ConfigError(f"line {no}: key {key!r}: {exc}") from None
        if check is not None and not check(v):
            raise ConfigError(f"line {no}: key {key!r} must be {desc}, got {val}")
        values[key], lines[key] = v, no
    if "command" not in values:
        raise ConfigError("missing required key 'command'")
    cfg = ExperimentConfig(
        command=values.pop("command"),
        sweep_axis=values.pop("sweep_axis", None),
        output_dir=values.pop("output_dir", DEFAULTS["output_dir"]),
        seed=values.pop("seed", DEFAULTS["seed"]),
        lines=lines,
    )
    cfg.params = values
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig):
    def fail(key, msg):
        where = f"line {cfg.lines[key]}: " if key in cfg.lines else ""
        raise ConfigError(f"{where}key {key!r}: {msg}")

    if cfg.command == "sweep":
        if cfg.sweep_axis is None:
            fail("sweep_axis", "required for command = sweep")
        if "sweep_command" not in cfg.params:
            fail("sweep_command", "required for command = sweep")
        name, start, stop, _ = cfg.sweep_axis
        if name == "D" and not (cfg.has("c1") and cfg.has("c2")):
            fail("sweep_axis", "a D sweep needs c1 and c2")
        if name == "n" and (start != int(start) or stop != int(stop)):
            fail("sweep_axis", "n must sweep over integers")
    elif cfg.sweep_axis is not None:
        fail("sweep_axis", "only valid with command = sweep")
    if not cfg.get("R") < cfg.get("w0"):
        fail("R", "need R < w0")
    if cfg.has("w") and not cfg.get("R") < cfg.get("w"):
        fail("R", "need R < w")
    if cfg.has("D") and cfg.get("D") > cfg.get("R"):
        fail("D", "deductible cannot exceed R")
    if cfg.has("c") and cfg.get("c") > cfg.get("R"):
        fail("c", "coverage cannot exceed R")
    if cfg.get("utility") == "cara" and cfg.get("aversion") <= 0:
        fail("aversion", "cara utility needs a positive aversion")
    if cfg.has("x") and len(cfg.get("x")) != cfg.get("n"):
        fail("x", f"expected {cfg.get('n')} investments, one per user")
    if cfg.has("c1") != cfg.has("c2"):
        fail("c1" if cfg.has("c1") else "c2", "c1 and c2 must be given together")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
