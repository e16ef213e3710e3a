import pytest

_CRITERIA: list[tuple[int, str, str, float]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    _CRITERIA.append((number, title, "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    merged: dict[int, list] = {}
    for number, title, verdict, secs in _CRITERIA:
        # parametrized criteria collapse into one line that fails if any case failed
        entry = merged.setdefault(number, [title, "PASS", 0.0])
        if verdict == "FAIL":
            entry[1] = "FAIL"
        entry[2] += secs
    terminalreporter.section("acceptance criteria")
    for number in sorted(merged):
        title, verdict, secs = merged[number]
        terminalreporter.write_line(f"{verdict} criterion {number:2d}: {title} ({secs:.1f} s)")
