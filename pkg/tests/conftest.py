import math

import pytest

from cyberinsure.model import MarketParams, RiskFunction, UtilityFunction


@pytest.fixture
def exp_params():
    """Exponential p0=0.5, lambda=1, R=10, w0=100, two users."""
    return MarketParams(n=2, w0=100.0, R=10.0, risk=RiskFunction.exponential(0.5, 1.0))


@pytest.fixture
def ln5():
    return math.log(5.0)


@pytest.fixture
def cara01():
    return UtilityFunction.cara(0.1)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                lines += [l for l in rep.capstdout.splitlines() if l.startswith("criterion")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
