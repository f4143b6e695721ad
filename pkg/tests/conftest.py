"""Collects acceptance-test outcomes and prints one PASS/FAIL line per criterion."""
import re

_AC = re.compile(r"test_ac(\d+)_")
_results: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    m = _AC.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results.setdefault(int(m.group(1)), []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        ok = all(_results[n])
        terminalreporter.write_line(f"AC{n} {'PASS' if ok else 'FAIL'}")
