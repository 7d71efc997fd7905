#################################################################
#   Libraries
#################################################################
import numpy as np
import pytest

from ftgmap.phantom import SHEPP_LOGAN_ELLIPSES, SheppLoganSpec, camera_image, shepp_logan

#################################################################
#   Tests
#################################################################
def test_shepp_logan_range_and_background():
    phantom = shepp_logan(SheppLoganSpec(64))
    image = phantom.as_array()
    assert phantom.grid.shape == (64, 64)
    assert image.min() >= 0.0
    assert image.max() <= 1.0
    # corners are outside the head
    assert image[0, 0] == 0.0
    assert image[-1, -1] == 0.0
    # skull ring at full intensity, brain at 0.2
    assert np.max(image) == pytest.approx(1.0)
    assert np.median(image[image > 0]) == pytest.approx(0.2, abs=0.05)


def test_shepp_logan_is_nearly_mirror_symmetric():
    image = shepp_logan(SheppLoganSpec(128)).as_array()
    assert np.mean(np.abs(image - image[:, ::-1])) < 1e-3


def test_shepp_logan_orientation():
    # the small bright ellipse at y = 0.35 sits above the center
    image = shepp_logan(SheppLoganSpec(64)).as_array()
    grid = SheppLoganSpec(64).grid
    row = int(np.argmin(np.abs(grid.coordinates(0) - 0.35)))
    column = int(np.argmin(np.abs(grid.coordinates(1) - 0.0)))
    assert image[row, column] == pytest.approx(0.3)


def test_shepp_logan_validation():
    with pytest.raises(ValueError):
        SheppLoganSpec(4)
    assert len(SHEPP_LOGAN_ELLIPSES) == 10


def test_camera_image():
    image = camera_image(32)
    assert image.grid.shape == (32, 32)
    assert image.grid.extent == ((-1.0, 1.0), (-1.0, 1.0))
    assert 0.0 <= image.values.min() < image.values.max() <= 1.0
