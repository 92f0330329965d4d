"""Shared fixtures and the per-criterion acceptance summary."""

from __future__ import annotations

import numpy as np
import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = title = None
    for key, value in report.user_properties:
        if key == "criterion":
            number, title = value
    if number is None:
        return
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": 0, "failed": []})
    if report.outcome == "passed":
        entry["passed"] += 1
    else:
        entry["failed"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "FAIL" if e["failed"] else "PASS"
        line = f"criterion {number:2d}: {status}  {e['title']}"
        if e["failed"]:
            line += "  (failed: " + ", ".join(e["failed"]) + ")"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
