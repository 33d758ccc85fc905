import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# the seven two-interval toilet readings used as the running shape example
TOILET_WINDOWS = [[0.7, 0.8], [1.0, 0.5], [0.5, 1.0], [0.8, 2.5], [3.2, 1.7], [0.8, 0.8],
                  [1.0, 1.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toilet_matrix():
    """One day per reading, each placed at intervals 30-31 of a 96-slot day."""
    Y = np.zeros((96, len(TOILET_WINDOWS)))
    for p, (a, b) in enumerate(TOILET_WINDOWS):
        Y[30, p], Y[31, p] = a, b
    return Y


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
