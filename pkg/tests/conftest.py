"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test backs a numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "seen": False})
    if rep.when == "call" or rep.failed or rep.skipped:
        entry["seen"] = True
        if rep.failed or rep.skipped:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        verdict = "PASS" if entry["ok"] and entry["seen"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number:>2} {verdict}  {entry['title']}")
