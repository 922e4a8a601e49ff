import math

import pytest
from hypothesis import HealthCheck, settings

from lightpulse.grid import Grid, rubidium87

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rb():
    return rubidium87()


@pytest.fixture(scope="session")
def small_grid(rb):
    # 64 λ long, λ/16 spacing: ħk is an integer number of momentum steps
    return Grid.from_spacing(rb.lambda_light / 16, 1024)


@pytest.fixture(scope="session")
def wr(rb):
    return rb.omega_r


def two_pi():
    return 2 * math.pi


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per criterion; repeated in the terminal summary."""

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
