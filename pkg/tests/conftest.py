"""Collects one pass/fail line per acceptance criterion and prints them after the run."""
import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Call ``criterion(number, ok, detail)`` once per criterion."""

    def record(number, ok, detail=""):
        prev = ACCEPTANCE_LINES.get(number, (True, []))
        ACCEPTANCE_LINES[number] = (prev[0] and bool(ok), prev[1] + ([detail] if detail else []))
        return ok

    return record


def pytest_runtest_logreport(report):
    # a criterion whose test errors out before recording must still show as failed
    if report.when == "call" and report.failed and "test_acceptance" in report.nodeid:
        number = getattr(report, "criterion_number", None)
        if number is not None:
            ACCEPTANCE_LINES[number] = (False, ACCEPTANCE_LINES.get(number, (False, []))[1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion_number = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        ok, details = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  " + "; ".join(details))
