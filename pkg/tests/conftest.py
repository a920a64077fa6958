import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

from elnetsim.scenario import load_scenario, shipped_scenarios  # noqa: E402


@pytest.fixture(scope="session")
def scenario_paths():
    return shipped_scenarios()


@pytest.fixture(scope="session")
def table1_path(scenario_paths):
    return scenario_paths["table1"]


@pytest.fixture
def table1(table1_path):
    return load_scenario(table1_path, env={})


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
