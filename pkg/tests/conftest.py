import numpy as np
import pytest

from mobdiff.city import CityGenConfig, generate_city, ground_truth_flows
from mobdiff.core import GridCity


@pytest.fixture
def uniform_city4():
    return GridCity(4, np.ones(16))


@pytest.fixture
def uniform_city2():
    return GridCity(2, np.ones(4))


@pytest.fixture(scope="session")
def city8():
    return generate_city(CityGenConfig(grid_side=8, n_hotspots=3, seed=7))


@pytest.fixture(scope="session")
def flows8(city8):
    return ground_truth_flows(city8, 2.0, total_trips=50_000.0)
