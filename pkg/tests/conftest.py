import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gexpect import CovarianceSet, GNormalSpec

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sigma_set():
    return CovarianceSet.from_variances([0.25, 1.0])


@pytest.fixture(scope="session")
def spec(sigma_set):
    return GNormalSpec(sigma_set)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
