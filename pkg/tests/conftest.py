import numpy as np
import pytest

from lutmpc.net import loopback_pair


def pytest_addoption(parser):
    parser.addoption("--run-fullscale", action="store_true", default=False,
                     help="run hours-long full-data reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-fullscale"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --run-fullscale")
    for item in items:
        if "fullscale" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def pair():
    s = loopback_pair(60.0)
    yield s
    for x in s:
        x.close()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``record(n, ok, detail)`` logs one acceptance verdict and asserts it."""
    def record(n, ok, detail=""):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        _CRITERIA[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
