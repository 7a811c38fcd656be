import numpy as np
import pytest

from artifact import LatentGrid, make_linear_schedule


@pytest.fixture(scope="session")
def sched50():
    """Default production schedule: T=1000, linear betas, 50 sample steps."""
    return make_linear_schedule(1000, 1e-4, 0.02, 50, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def random_latent(rng):
    def make(channels=4, height=16, width=16, seed=None):
        r = rng if seed is None else np.random.default_rng(seed)
        return LatentGrid(r.standard_normal((channels, height, width), dtype=np.float32))

    return make
