import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from craneplan.chain import data_path, load_chain, reference_crane
from craneplan.collision import load_scene

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def crane():
    return reference_crane()


@pytest.fixture(scope="session")
def env1():
    return load_scene(data_path("env1.json"))


@pytest.fixture(scope="session")
def env2():
    return load_scene(data_path("env2.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
