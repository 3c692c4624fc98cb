"""Collects per-criterion outcomes from tests marked ``acceptance`` and prints one line each."""

from __future__ import annotations

_criteria: dict[int, dict] = {}


def _criterion(item):
    mark = item.get_closest_marker("acceptance")
    if mark is None or not mark.args:
        return None
    return mark.args[0], mark.args[1] if len(mark.args) > 1 else ""


def pytest_collection_modifyitems(items):
    for item in items:
        found = _criterion(item)
        if found:
            number, title = found
            entry = _criteria.setdefault(number, {"title": title, "tests": set(), "failed": set(), "seconds": 0.0})
            entry["tests"].add(item.nodeid)


def pytest_runtest_logreport(report):
    for entry in _criteria.values():
        if report.nodeid in entry["tests"]:
            entry["seconds"] += report.duration
            if report.failed or (report.when == "call" and report.skipped):
                entry["failed"].add(report.nodeid)
            entry.setdefault("ran", set()).add(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    ran = {n: e for n, e in _criteria.items() if e.get("ran")}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ran):
        e = ran[number]
        status = "FAIL" if e["failed"] else "PASS"
        terminalreporter.write_line(
            f"criterion {number}: {status}  {e['title']}  ({len(e['ran'])} tests, {e['seconds']:.1f} s)"
        )
