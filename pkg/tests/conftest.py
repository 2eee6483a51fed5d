import numpy as np
import pytest

from wiplab.maps import MapModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def doubling():
    return MapModel.doubling()


@pytest.fixture
def gauss():
    return MapModel.gauss()


@pytest.fixture
def lsv():
    return MapModel.lsv(0.25)
