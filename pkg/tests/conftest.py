"""Collects acceptance outcomes and prints one line per criterion after the run."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            status = "FAIL (strict xfail: " + report.wasxfail + ")"
        elif report.passed:
            status = "PASS"
        elif report.skipped:
            status = "SKIPPED"
        else:
            status = "FAIL"
        prev = _RESULTS.get(key)
        # a criterion passes only if all of its tests pass
        if prev is None or prev == "PASS":
            _RESULTS[key] = status


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), status in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"criterion {num:2d} {title}: {status}")
