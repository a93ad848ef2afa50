import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Property tests run simulation kernels whose first call pays numpy warm-up
# costs; wall-clock deadlines only produce flaky failures there.
settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
