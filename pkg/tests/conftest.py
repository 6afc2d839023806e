import numpy as np
import pytest

from hgperf import synthetic

_acceptance = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        status = "SKIP"
    else:
        status = "FAIL"
    _acceptance.append((marker.args[0], status))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_acceptance, key=lambda x: int(x[0].split()[0][1:])):
        terminalreporter.write_line(f"{status:4}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """3 problems x 3 instances x 6 variants, D=5, two budgets."""
    return synthetic.make_dataset(
        n_problems=3, n_instances=3, dimensions=(5,), budgets=(50, 100), variant_limit=6, seed=3
    )
