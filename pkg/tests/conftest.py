import numpy as np
import pytest

from perfhom.capacity import PExponent
from perfhom.mesh import Grid


@pytest.fixture(scope="session")
def pe_15():
    return PExponent(1.5, 2)


@pytest.fixture(scope="session")
def pe_2():
    return PExponent(2.0, 2)


@pytest.fixture(scope="session")
def grid16():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, 32)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
