import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    cid, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIPPED"}[report.outcome]
        detail = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        prev = _RESULTS.get(cid)
        # a criterion with several checks fails if any check fails
        rank = {"FAIL": 2, "PASS": 1, "SKIPPED": 0}
        if prev is None or rank[status] > rank[prev[0]]:
            _RESULTS[cid] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: (len(c), c)):
        status, title, detail = _RESULTS[cid]
        line = f"{cid} {status:<7} {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
