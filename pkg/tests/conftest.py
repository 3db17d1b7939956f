import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    row = _CRITERIA.setdefault(number, {"title": title, "passed": True, "seen": False})
    if report.when == "call" or report.failed:
        row["seen"] = True
        row["passed"] = row["passed"] and report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        row = _CRITERIA[number]
        status = "PASS" if row["seen"] and row["passed"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number}: {row['title']}")
