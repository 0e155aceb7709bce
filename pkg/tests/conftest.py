import pytest

from mmdcsim.engine import SimConfig


@pytest.fixture
def config():
    return SimConfig()


@pytest.fixture
def small_config():
    """Short run for integration-style tests: 0.5 s, light packet load."""
    return SimConfig(sim_duration_s=0.5, udp_interarrival_s=80e-6, seed=5)
