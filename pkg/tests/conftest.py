import numpy as np
import pytest

from ofmpc.simulator import get_terminal_design


@pytest.fixture(scope="session")
def pendulum_design():
    return get_terminal_design("pendulum")


@pytest.fixture(scope="session")
def cstr_design():
    return get_terminal_design("cstr")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
