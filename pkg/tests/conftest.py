import numpy as np
import pytest

from frofa.feature_store import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cache():
    return generate_synthetic(4, 6, 4, 8, cluster_scale=3.0, noise_scale=0.5, seed=0)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
