"""Suite plumbing: a fixture for recording measured values.

Acceptance criteria that report numbers without asserting on them push one
line each into a shared list; the terminal summary prints the list so the
values survive output capture.
"""

import pytest

_MEASUREMENTS = []


@pytest.fixture
def record_measurement():
    """Collect a line for the end-of-run measurement report."""
    def record(line: str) -> None:
        _MEASUREMENTS.append(str(line))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _MEASUREMENTS:
        return
    terminalreporter.section("recorded measurements")
    for line in _MEASUREMENTS:
        terminalreporter.write_line(line)
