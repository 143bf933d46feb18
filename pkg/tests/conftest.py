import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rkmips.core import VectorSet

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")


def random_instance(seed, n, m, d, spread=(0.2, 2.0)):
    """Items with varied norms, unit users."""
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n, d)) * rng.uniform(*spread, (n, 1))
    U = rng.standard_normal((m, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return VectorSet(P.astype(np.float32)), VectorSet(U.astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Log one acceptance line; printed again in the terminal summary."""
    ACCEPTANCE.append((criterion, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
