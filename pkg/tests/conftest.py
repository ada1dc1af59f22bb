import numpy as np
import pytest

from fenelimit import core

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ops2():
    return core.operators_for(2, 1.0, 6, 4)


@pytest.fixture(scope="session")
def params16():
    return core.validate_params(core.Parameters(mu=1.0, lam=98.0, grid_n=16, dt=0.01, t_final=0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
