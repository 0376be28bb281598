import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_c"):
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            msg = ""
            if report.failed:
                msg = str(report.longrepr.reprcrash.message).splitlines()[0] if hasattr(
                    report.longrepr, "reprcrash") else "error"
            CRITERIA[name] = (report.outcome.upper(), msg)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA):
        outcome, msg = CRITERIA[name]
        n = int(name[6:8])
        line = f"criterion {n:2d} {outcome:7s} {name}"
        terminalreporter.write_line(line + (f"  -- {msg[:300]}" if msg else ""))
