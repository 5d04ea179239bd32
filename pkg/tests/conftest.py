import numpy as np
import pytest

from blunderfit.fitting import Dataset, design_poly


def line_dataset(n=20, a=2.0, b=-1.0, sigma=0.1, noise=None, offsets=None, prefix="p"):
    """Points on y = a + b x over x in [0, 1], optional noise and per-index offsets (in y units)."""
    x = np.linspace(0.0, 1.0, n)
    y = a + b * x
    if noise is not None:
        y = y + noise
    if offsets:
        y = y.copy()
        for k, d in offsets.items():
            y[k] += d
    ids = [f"{prefix}{k:03d}" for k in range(n)]
    return Dataset.from_arrays(design_poly(x, 1), y, sigma, ids=ids)


@pytest.fixture
def blunder_line():
    """20 noiseless points, a=2, b=-1, sigma=0.1, point 7 shifted by 50 sigma."""
    return line_dataset(offsets={7: 50 * 0.1})


_acceptance = {}


def pytest_runtest_logreport(report):
    if "acceptance" in report.keywords and (report.when == "call" or report.failed):
        _acceptance.setdefault(report.nodeid, "PASS")
        if report.failed:
            _acceptance[report.nodeid] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, status in _acceptance.items():
        terminalreporter.write_line(f"{status}  {nodeid.split('::')[-1]}")
