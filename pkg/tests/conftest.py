"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""
import re

import pytest

DETAILS = {}
OUTCOMES = {}
_CRIT = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def report():
    """``report(n, text)`` attaches a one-line summary to criterion ``n``."""

    def _report(n, text):
        DETAILS.setdefault(int(n), []).append(text)
        print(f"criterion {n}: {text}")

    return _report


def pytest_runtest_logreport(report):
    m = _CRIT.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        failed = report.outcome != "passed"
        OUTCOMES[n] = OUTCOMES.get(n, False) or failed


def pytest_terminal_summary(terminalreporter):
    if not OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(OUTCOMES):
        status = "FAIL" if OUTCOMES[n] else "PASS"
        tr.write_line(f"criterion {n}: {status}  {'; '.join(DETAILS.get(n, []))}")
