import numpy as np
import pytest

from dcdmimo.model import complex_normal

_REPORT: list[str] = []


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture
def cn():
    """Draw CN(0, 1) arrays from a fixed generator."""
    g = np.random.default_rng(777)

    def draw(*shape):
        return complex_normal(g, shape)

    return draw


@pytest.fixture(scope="session")
def acceptance_report():
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
