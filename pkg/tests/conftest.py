import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("qgraph", derandomize=True, deadline=None, max_examples=40, print_blob=True)
settings.load_profile("qgraph")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n = int(name.split("_")[2])
        _CRITERIA.setdefault(n, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(_CRITERIA[n])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} "
                                    f"({sum(_CRITERIA[n])}/{len(_CRITERIA[n])} cases)")
