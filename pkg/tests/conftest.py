import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERION = re.compile(r"test_criterion_(\d+)")
_outcomes: dict[int, list[tuple[str, str]]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(int(m.group(1)), []).append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_outcomes):
        results = _outcomes[k]
        ok = all(outcome == "passed" for _, outcome in results)
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  ({names})")
