import warnings

import pytest

from mch_rh import direct_scattering as ds
from mch_rh import spectral_geometry as sg

SMALL_GRID = dict(R=10.0, order=10, levels=3)

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def bg():
    return sg.BackgroundPair(1.0, 2.0)


@pytest.fixture(scope="session")
def datum(bg):
    return ds.build_step_datum(bg, 1.0)


@pytest.fixture(scope="session")
def small_grid(bg):
    return sg.build_contour(bg, **SMALL_GRID)


@pytest.fixture(scope="session")
def small_table(datum, small_grid):
    return ds.reflection(datum, small_grid)


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
