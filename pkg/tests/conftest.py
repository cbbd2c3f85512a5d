import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    failed = report.failed
    if report.when == "call" and report.skipped:
        return  # a skipped sub-run neither proves nor refutes its criterion
    if report.when == "call" or failed:
        prev = _results.get(key, "PASS")
        _results[key] = "FAIL" if failed or prev == "FAIL" else "PASS"
        if failed and report.longrepr is not None:
            _results[key + ("reason",)] = str(getattr(report.longrepr, "reprcrash", None) and
                                              report.longrepr.reprcrash.message or report.longrepr).splitlines()[0]


def pytest_terminal_summary(terminalreporter):
    keys = sorted(k for k in _results if len(k) == 2)
    if not keys:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in keys:
        status = _results[(number, title)]
        line = f"criterion {number:>2} {status}  {title}"
        reason = _results.get((number, title, "reason"))
        if status == "FAIL" and reason:
            line += f"  -- {reason[:160]}"
        terminalreporter.write_line(line)
