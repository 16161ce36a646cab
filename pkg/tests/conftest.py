import time

import pytest

from mgsync.engine import run
from mgsync.scenario import bundled, parse_scenario

_RUNS = {}


def bundled_run(name):
    """Run a bundled case once per session; returns (scenario, series, wall seconds)."""
    if name not in _RUNS:
        s = parse_scenario(bundled(name))
        t0 = time.perf_counter()
        ts = run(s)
        _RUNS[name] = (s, ts, time.perf_counter() - t0)
    return _RUNS[name]


@pytest.fixture
def case1():
    return parse_scenario(bundled("case1"))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}")
