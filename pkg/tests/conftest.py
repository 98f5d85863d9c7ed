import numpy as np
import pytest

from nrdf.gauss import GaussMarkovModel


def two_dim_model():
    """Stable, observable 2-state model with correlated 2-dim observations."""
    return GaussMarkovModel(
        A=[[0.8, 0.2], [0.0, 0.5]],
        B=np.eye(2),
        C=[[1.0, 0.0], [0.5, 1.0]],
        N=0.3 * np.eye(2),
    )


@pytest.fixture
def model2():
    return two_dim_model()


@pytest.fixture
def memoryless():
    return GaussMarkovModel([[0.0]], [[0.0]], [[1.0]], [[1.0]])


@pytest.fixture
def ar1():
    return GaussMarkovModel([[0.9]], [[1.0]], [[1.0]], [[0.1]])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
