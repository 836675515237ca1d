import numpy as np
import pytest

from nnreach.envs import get_env
from nnreach.nn import MlpModel, Nndm

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES = []


def random_model(rng, sizes, scale=1.0):
    weights = [rng.normal(0.0, scale / np.sqrt(a), size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0.0, 0.3, size=b) for b in sizes[1:]]
    return MlpModel.from_arrays(weights, biases)


def random_nndm(rng, m_x=2, m_u=1, hidden=(8, 8), dt=0.1):
    return Nndm(random_model(rng, [m_x + m_u, *hidden, m_x]), dt, m_x, m_u)


@pytest.fixture(scope="session")
def pendulum():
    return get_env("pendulum")


@pytest.fixture(scope="session")
def dubins():
    return get_env("dubins")


@pytest.fixture(scope="session")
def pendulum_model(pendulum):
    return pendulum.load_model()


@pytest.fixture(scope="session")
def dubins_model(dubins):
    return dubins.load_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
