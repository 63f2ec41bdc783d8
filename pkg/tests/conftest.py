import warnings

import pytest

from rsmimo.params import FrameBudgetWarning


@pytest.fixture(autouse=True)
def _quiet_frame_budget():
    # the reference frame lengths overshoot tau on purpose; see params.py
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FrameBudgetWarning)
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
