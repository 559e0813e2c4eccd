import os

import pytest

from qhd1d.acceptance import STABLE, STABLE_N, stable_profile
from qhd1d.grid import Grid
from qhd1d.steady import picard_solve

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def stable_steady():
    g = Grid(STABLE_N)
    return picard_solve(stable_profile(g), STABLE, g)


@pytest.fixture(scope="session")
def small_stable_steady():
    g = Grid(101)
    return picard_solve(stable_profile(g), STABLE, g)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
