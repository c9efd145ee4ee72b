"""Session-wide experts shared by the expert, CLI and acceptance tests."""
import sys

import pytest

from ocrirl.envs import FourRoomsEnv
from ocrirl.experiments import car_expert
from ocrirl.experts import OptionCriticConfig, option_critic_train


@pytest.fixture(scope="session")
def fourrooms_options():
    env = FourRoomsEnv()
    return env, option_critic_train(env, OptionCriticConfig())


@pytest.fixture(scope="session")
def car_hand_expert():
    return car_expert()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
