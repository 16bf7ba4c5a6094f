"""Shared fixtures: the planning model on N = 3 and a few reference problems."""
import numpy as np
import pytest

from radplan.nonlinearity import NonlinearityPair
from radplan.planning_model import PolicyField, build_model
from radplan.radial_solver import GridConfig, RadialProblem, ode_oracle, picard_solve

# Filled by tests/test_acceptance.py, printed at the end of the session.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def constant(c):
    return lambda r: np.full_like(np.asarray(r, dtype=float), float(c))


@pytest.fixture(scope="session")
def model_and_problem():
    return build_model(3, (1.0, 1.0, 1.0), 1.0, 1.0)


@pytest.fixture(scope="session")
def model(model_and_problem):
    return model_and_problem[0]


@pytest.fixture(scope="session")
def model_problem(model_and_problem):
    return model_and_problem[1]


@pytest.fixture(scope="session")
def model_grid():
    return GridConfig(r_max=2.0, n_points=4001)


@pytest.fixture(scope="session")
def model_solution(model_problem, model_grid):
    return picard_solve(model_problem, model_grid)


@pytest.fixture(scope="session")
def model_oracle(model_problem, model_grid):
    return ode_oracle(model_problem, model_grid)


@pytest.fixture(scope="session")
def model_field(model, model_solution):
    return PolicyField(model, model_solution)


@pytest.fixture(scope="session")
def linear_problem():
    """h(u) = u, g(u) = u - 1, a = 1, b = 0, N = 3: u(r) = sinh(r)/r."""
    return RadialProblem(3, constant(1.0), constant(0.0), NonlinearityPair.power(1, 1), 1.0)


@pytest.fixture(scope="session")
def cubic_problem():
    """h(u) = u^3, g(u) = u - 1, a = b = 1, N = 3; H converges at infinity."""
    return RadialProblem(3, constant(1.0), constant(1.0), NonlinearityPair.power(3, 1), 1.0)
