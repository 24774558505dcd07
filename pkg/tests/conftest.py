import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, list[bool]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key in report.keywords:
        if key.startswith("criterion_"):
            _criteria.setdefault(key[len("criterion_"):], []).append(report.passed)


def pytest_collection_modifyitems(items):
    for item in items:
        for mark in item.iter_markers("criterion"):
            item.keywords[f"criterion_{mark.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria):
        results = _criteria[cid]
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{cid} {status} ({sum(results)}/{len(results)} checks)")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)
