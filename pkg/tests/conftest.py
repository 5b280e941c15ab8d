import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# every property runs at least 100 cases from a fixed seed
settings.register_profile(
    "seeded",
    max_examples=100,
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("seeded")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
