import numpy as np
import pytest

from gelscope.spectrum import MassSpectrum


@pytest.fixture
def dirac():
    return MassSpectrum.dirac(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# lines recorded by test_acceptance.py, echoed after the run so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
