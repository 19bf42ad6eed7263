import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from persmon import kernels
from persmon.scenario import uniform_scenario

settings.register_profile(
    "default", deadline=None, max_examples=30, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

COUPLED_A = np.array([[-1.0, -0.1], [-0.1, 0.01]])
I2 = np.eye(2)

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    ok = call.excinfo is None
    prev = _criteria.get(n, (title, True))
    _criteria[n] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(autouse=True)
def _restore_backend():
    prev = kernels.backend()
    yield
    kernels.use_backend(prev)


@pytest.fixture
def coupled_A():
    return COUPLED_A.copy()


def scalar_scenario(a=0.0, q=1.0, h=1.0, r=1.0, radius=1.0, positions=(0.0,), n_agents=1, **kw):
    return uniform_scenario(np.array(positions, dtype=float), np.array([[a]]), np.array([[q]]),
                            np.array([[h]]), np.array([[r]]), radius, n_agents, **kw)


def coupled_scenario(positions, radius, n_agents, **kw):
    return uniform_scenario(np.asarray(positions, dtype=float), COUPLED_A, I2, I2, I2, radius,
                            n_agents, **kw)
