import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coe_grpo import env

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_set():
    return env.gen_dataset(3, 10, 10)


@pytest.fixture(scope="session")
def set200():
    return env.gen_dataset(0, 100, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
