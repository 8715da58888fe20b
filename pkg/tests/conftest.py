import numpy as np
import pytest

from mfis import Quadratic, get_experiment, lq_to_model, solve_riccati

# filled by test_acceptance, printed once at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sec51():
    e = get_experiment("sec_5_1")
    return e, lq_to_model(e.lq), solve_riccati(e.lq, e.g)


@pytest.fixture(scope="session")
def ex41():
    e = get_experiment("example_4_1")
    return e, lq_to_model(e.lq), solve_riccati(e.lq, e.g)


@pytest.fixture
def quad1():
    return Quadratic(np.array([[1.0]]), np.zeros(1), np.zeros((1, 1)))
