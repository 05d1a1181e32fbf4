import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_line_search():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", module="scipy.optimize")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    def _report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
