import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multicp.kernels import available_backends

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=available_backends())
def backend(request):
    """Every kernel backend available in this build."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
