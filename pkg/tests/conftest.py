"""Collects outcomes of tests marked ``criterion`` and prints one line per criterion at the end."""

import pytest

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(marker)
        # a failure in any phase wins over an earlier pass
        if prev is None or prev[0] == "PASS":
            _outcomes[marker] = ({"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome],
                                 _reason(report))


def _reason(report):
    if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
        return report.longrepr[2].removeprefix("Skipped: ")
    return ""


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (status, reason) in sorted(_outcomes.items()):
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({reason})" if reason else ""))
