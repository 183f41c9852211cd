import numpy as np
import pytest

from sindy_unroll.simulate import simulate, system_spec

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def cubic_spec():
    return system_spec("cubic-oscillator")


@pytest.fixture(scope="session")
def cubic_fine(cubic_spec):
    """50,001 snapshots at dt=2e-4 over [0, 10]."""
    return simulate(cubic_spec)


@pytest.fixture(scope="session")
def advection_fine():
    return simulate(system_spec("advection"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
