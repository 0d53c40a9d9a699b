import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shuttlesim.experiments import bias_trace, map_bias_plunger, reference_config

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = {}


def record(key: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}"
    _ACCEPTANCE[key] = line
    print(line)


@pytest.fixture(scope="session")
def acceptance_record():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        terminalreporter.write_line(_ACCEPTANCE[key])


@pytest.fixture(scope="session")
def ref():
    return reference_config()


@pytest.fixture(scope="session")
def ref_hot():
    return reference_config(temperature=1.5)


@pytest.fixture(scope="session")
def bias_grid():
    return np.linspace(-1e-3, 6e-3, 200)


@pytest.fixture(scope="session")
def trace_cold(ref, bias_grid):
    import time

    p, d = ref
    t0 = time.perf_counter()
    tr = bias_trace(p, d, bias_grid)
    tr.elapsed = time.perf_counter() - t0
    return tr


@pytest.fixture(scope="session")
def trace_hot(ref_hot, bias_grid):
    p, d = ref_hot
    return bias_trace(p, d, bias_grid)


@pytest.fixture(scope="session")
def plunger_map(ref):
    p, d = ref
    return map_bias_plunger(p, d, np.linspace(-1e-3, 6e-3, 8), np.linspace(-1.25, -0.92, 111))
