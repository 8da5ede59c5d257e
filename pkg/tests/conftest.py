import numpy as np
import pytest

from tests.helpers import beach


@pytest.fixture(scope="session")
def beach01():
    return beach(0.1)


@pytest.fixture(scope="session")
def small_beach():
    return beach(0.1, n=200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
