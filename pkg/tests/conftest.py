import numpy as np
import pytest

from hypolab import algebra
from hypolab.group import Group


@pytest.fixture(scope="session")
def heis():
    return algebra.heisenberg3()


@pytest.fixture(scope="session")
def heis_group(heis):
    return Group(heis)


@pytest.fixture(scope="session")
def free23():
    return algebra.free_nilpotent(2, 3)


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)
