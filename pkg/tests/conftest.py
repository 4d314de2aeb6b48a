import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lssweep.problem import GridSpec

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def grid_at(n: int, b: int = 4, ppw: float = 8.0, C_pml: float = 10.0) -> GridSpec:
    """Grid with ``n`` interior points per side and ``ppw`` points per wavelength."""
    return GridSpec(2 * math.pi * (n + 1) / ppw, n, b, C_pml)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
