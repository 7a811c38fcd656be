import pytest
import torch
import torch.nn.functional as F

import denoiser_bridge as db


@pytest.fixture(autouse=True)
def _fresh_process_session():
    db.reset_session()
    yield
    db.reset_session()


@pytest.fixture
def session():
    return db.BridgeSession()


@pytest.fixture(scope="module")
def live_server():
    db.reset_session()
    server = db.serve("127.0.0.1:0")
    yield server
    server.stop()
    db.reset_session()


@pytest.fixture(scope="session")
def smooth_image():
    """Factory for seeded low-frequency test images in [-0.8, 0.8]."""

    def make(seed: int, size: int = 32, channels: int = 3) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        coarse = torch.rand((1, channels, size // 8, size // 8), generator=generator)
        coarse = coarse * 1.6 - 0.8
        full = F.interpolate(coarse, size=(size, size), mode="bilinear", align_corners=False)
        return full[0]

    return make
