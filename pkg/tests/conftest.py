import numpy as np
import pytest

from nczw.dyadic_model import DyadicGrid, OperatorField
from nczw.generators import random_positive_field
from nczw.weights import Weight, parse_weight_spec, step_weight

STANDARD_WEIGHTS = ['const:1', 'step:2,1', 'power:0.5,0', 'cascade:2,7']


@pytest.fixture(scope='function')
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope='function')
def grid() -> DyadicGrid:
    return DyadicGrid(1, 6)


@pytest.fixture(scope='function')
def plane_grid() -> DyadicGrid:
    return DyadicGrid(2, 3)


@pytest.fixture(scope='function')
def step(grid) -> Weight:
    return step_weight(grid, 2, 1)


@pytest.fixture(scope='function', params=STANDARD_WEIGHTS)
def weight(request, grid) -> Weight:
    return parse_weight_spec(request.param, grid)


@pytest.fixture(scope='function')
def positive_field(grid, rng) -> OperatorField:
    return random_positive_field(grid, 2, rng)


@pytest.fixture(scope='function')
def scalar_field(grid, rng) -> OperatorField:
    return random_positive_field(grid, 1, rng)
