import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cgt.data import partition, synthetic_a9a

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

A9A_LAM = [5e-4, 1e-3, 2e-3, 1e-3, 1e-3]
A9A_P = [4, 5, 6, 5, 4]


@pytest.fixture(scope="session")
def a9a_samples():
    return synthetic_a9a(seed=0)


@pytest.fixture(scope="session")
def a9a_shards(a9a_samples):
    return partition(a9a_samples, 5, "contiguous", dim=123)


def dense_rho(M, a, b):
    n = M.shape[0]
    return float(np.max(np.abs(np.linalg.eigvals(M - np.outer(a, b) / n))))


def fd_grad(f, theta, h):
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


ACCEPTANCE_LINES: list[str] = []


def report(number: int, name: str, ok: bool, detail: str) -> bool:
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
