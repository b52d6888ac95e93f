import numpy as np
import pytest

from shadowpool.data import gen_blobs


@pytest.fixture
def blobs():
    return gen_blobs(0, 30, 3, 6, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
