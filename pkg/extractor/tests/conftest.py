import numpy as np
import pytest


@pytest.fixture
def fake_image():
    rng = np.random.default_rng(2)
    return rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
