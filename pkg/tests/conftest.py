import numpy as np
import pytest

from polaron import pekar


@pytest.fixture(scope="session")
def solved():
    return pekar.solve_ground_state()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_criteria: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    # the call phase, or a failed setup that skips it
    if name.startswith("test_criterion_") and (report.when == "call" or report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = (report.outcome, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, duration, detail = _criteria[name]
        number = name.split("_")[2]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict} ({duration:.0f} s) {detail}")
