import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from boundarycurv import manifolds
from boundarycurv.critical import global_scan

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ellipse():
    return manifolds.ellipse(2.0, 1.0)


@pytest.fixture(scope="session")
def ellipse_scan(ellipse):
    return global_scan(ellipse)


@pytest.fixture(scope="session")
def circle():
    return manifolds.circle()


@pytest.fixture(scope="session")
def disk():
    return manifolds.disk()


@pytest.fixture(scope="session")
def ball():
    return manifolds.ball3()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one (criterion, passed, summary) line per acceptance check."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, text in sorted(lines):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {text}")
