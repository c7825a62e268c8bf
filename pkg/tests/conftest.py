"""Collect acceptance outcomes and print one line per criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    if rep.passed:
        detail = ""
    else:
        text = str(rep.longreprtext).strip().splitlines()
        errors = [ln for ln in text if ln.startswith("E ")]
        detail = (errors[0][1:].strip() if errors else (text[-1] if text else ""))[:200]
    _RESULTS[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, detail = _RESULTS[number]
        line = f"criterion {number} [{title}]: {status}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
