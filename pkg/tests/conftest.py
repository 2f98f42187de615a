import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("screenlab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("screenlab")


@pytest.fixture
def toy_library():
    from screenlab.seqmodel import SequenceDistribution

    return SequenceDistribution("ABC", np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]]))


ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
