import numpy as np
import pytest

from nullctrl.scenario import load_scenario

PRESETS = ["star2", "tree4", "kalman-neg", "kalman-neg-tree", "nonlinear-star2"]
CONTROLLABLE = ["star2", "tree4"]


@pytest.fixture(scope="session")
def star2():
    return load_scenario("star2")


@pytest.fixture(scope="session")
def tree4():
    return load_scenario("tree4")


@pytest.fixture(scope="session")
def kneg():
    return load_scenario("kalman-neg")


@pytest.fixture(scope="session")
def nl_star2():
    return load_scenario("nonlinear-star2")


@pytest.fixture(scope="session")
def star2_short():
    """star2 with a coarse time grid for tests that need many solves."""
    return load_scenario("star2", ["grid.Nt=50"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
