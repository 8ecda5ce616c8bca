import numpy as np
import pytest

from sfrecon import GridSpec, RoomSpec


@pytest.fixture(scope="session")
def plane_room():
    return RoomSpec([5.8, 4.15, 2.55], 0.3, [1.4, 1.6, 1.0])


@pytest.fixture(scope="session")
def plane_grid():
    return GridSpec([2.75, 1.4, 0.8], 0.02, (5, 5, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
