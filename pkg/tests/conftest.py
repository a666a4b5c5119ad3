import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmdp_accel import TabularCmdp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_cmdp(seed, S=4, A=3, m=1, gamma=0.9, thresholds=None):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.uniform(0, 1, size=(m + 1, S, A))
    rho = rng.dirichlet(np.ones(S))
    c = np.zeros(m) if thresholds is None else thresholds
    return TabularCmdp(P, r, c, gamma, rho)


def one_state(r_lam=(1.0, 0.0), gamma=0.5, constraint=None, threshold=0.0):
    """Single state, two actions. With ``constraint`` a second reward row is added."""
    P = np.ones((1, 2, 1))
    rewards = [np.array([r_lam], dtype=float)]
    c = []
    if constraint is not None:
        rewards.append(np.array([constraint], dtype=float))
        c = [threshold]
    return TabularCmdp(P, np.array(rewards), c, gamma, [1.0])


@pytest.fixture
def small():
    return random_cmdp(3, S=4, A=3, m=2)


# Lines recorded by the acceptance suite, printed once at the end of the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
