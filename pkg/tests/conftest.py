"""Shared fixtures for the ThermoCH test suite."""
import numpy as np
import pytest

from thermoch.grid import Grid
from thermoch.schemas import Parameters
from thermoch.stepper import State


@pytest.fixture
def params():
    return Parameters()


@pytest.fixture
def grid16():
    return Grid.uniform(1, 16)


@pytest.fixture
def grid8():
    return Grid.uniform(1, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def uniform_state(grid16):
    return State(grid16, 0.0, grid16.constant(0.2), grid16.constant(1.0))
