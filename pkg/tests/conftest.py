import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ctesn.models import heating_family, robertson_family
from ctesn.surrogate import default_training_config, train

settings.register_profile(
    "ctesn",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ctesn")


@pytest.fixture(scope="session")
def robertson_fam():
    return robertson_family()


@pytest.fixture(scope="session")
def heating_fam():
    return heating_family()


@pytest.fixture(scope="session")
def rob_surrogate(robertson_fam):
    # the first 5 Sobol points in 3-D are coplanar; 6 is the smallest
    # affinely independent prefix
    return train(robertson_fam, default_training_config("robertson", n_train=6))


@pytest.fixture(scope="session")
def heat_surrogate(heating_fam):
    return train(heating_fam, default_training_config("heating", n_train=12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
