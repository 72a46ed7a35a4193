import numpy as np
import pytest

from qgfbsde import MarketModel, SeedSpec, TimeGrid, simulate_index


@pytest.fixture(scope="session")
def base_model():
    return MarketModel()


@pytest.fixture(scope="session")
def grid100():
    return TimeGrid(1.0, 100)


@pytest.fixture(scope="session")
def paths20k(base_model, grid100):
    return simulate_index(base_model, grid100, 20000, SeedSpec(7))


def ulps(a, b):
    """Distance in units of the last place of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.spacing(np.abs(b))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
