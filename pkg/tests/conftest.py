import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def unit_rows(b, d, seed=0):
    x = np.random.default_rng(seed).normal(size=(b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rows():
    return unit_rows
