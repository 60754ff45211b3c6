import numpy as np
import pytest

from advtrain.datagen import make_gen_model, sparse_theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ones10():
    return make_gen_model(np.ones(10), "identity", 1.0)


@pytest.fixture
def sparse1000():
    return make_gen_model(sparse_theta(1000, 10), "identity", 1.0)


def random_spd(rng, d, floor=0.2):
    A = rng.standard_normal((d, d))
    return A @ A.T / d + floor * np.eye(d)
