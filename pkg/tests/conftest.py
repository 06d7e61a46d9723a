import numpy as np
import pytest

from bdia.config import default_mixture
from bdia.core import NoiseSchedule, make_time_grid
from bdia.models import GaussianMixture, MixturePredictor


@pytest.fixture
def vp():
    return NoiseSchedule("vp")


@pytest.fixture
def edm():
    return NoiseSchedule("edm")


@pytest.fixture
def mixture2():
    return default_mixture(2)


@pytest.fixture
def vp_grid():
    return make_time_grid("uniform", 20, 1e-3, 0.999)


@pytest.fixture
def vp_pred(mixture2, vp):
    return MixturePredictor(mixture2, vp)


@pytest.fixture
def gauss1():
    return GaussianMixture.from_params([(1.0, [0.0], 1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
