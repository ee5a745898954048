import numpy as np
import pytest

from stlab.analytic import ModelParams
from stlab.stable_laws import get_table


@pytest.fixture(scope="session")
def p15():
    return ModelParams(1.5)


@pytest.fixture(scope="session")
def table15(p15):
    return get_table(p15)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
