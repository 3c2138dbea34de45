import numpy as np
import pytest

from relightkit.geometry import CameraModel, InverseDepthMap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cam():
    return CameraModel(fov_deg=90.0, width=80, height=60)


def make_scene_depth(height=60, width=80, sky_rows=20, ground_inv=900.0,
                     sky_inv=50.0):
    """Synthetic inverse depth: far sky band on top, near ground below."""
    inv = np.full((height, width), ground_inv)
    inv[:sky_rows] = sky_inv
    return InverseDepthMap(inv)


@pytest.fixture
def scene_depth():
    return make_scene_depth()
