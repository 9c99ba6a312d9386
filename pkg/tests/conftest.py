import numpy as np
import pytest

from sem_el import sem
from sem_el.weights import build_grid_queen, row_standardize

ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Register one acceptance outcome for the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid49():
    return row_standardize(build_grid_queen(7, 7))


@pytest.fixture(scope="session")
def design49(grid49):
    return sem.trend_design(grid49)


def random_weights(rng, n, density=0.4, standardize=True):
    """Random nonnegative zero-diagonal weights (no zero rows)."""
    w = (rng.random((n, n)) < density) * rng.random((n, n))
    np.fill_diagonal(w, 0.0)
    for i in range(n):
        if not w[i].any():
            w[i, (i + 1) % n] = 1.0
    if standardize:
        w = w / w.sum(axis=1, keepdims=True)
    return w
