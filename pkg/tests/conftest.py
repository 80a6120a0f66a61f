"""Shared fixtures and the acceptance-criteria reporting hook."""
import numpy as np
import pytest

from ldp_gradtrack import build_ring

ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}{suffix}")


@pytest.fixture
def ring10():
    return build_ring(10, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
