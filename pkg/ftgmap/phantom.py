#!/usr/bin/env python3

################################################
#
#   Test images: Shepp-Logan phantom and the
#   cameraman picture
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from skimage import data as skimage_data
from skimage.transform import resize

from ftgmap.grid import Field, Grid


# Modified Shepp-Logan table:
#   (intensity, semi-axis a, semi-axis b, center x, center y, angle in degrees)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


################################################
#   SheppLoganSpec
################################################
@dataclass(frozen=True)
class SheppLoganSpec:
    resolution: int
    ellipses: Tuple[Tuple[float, ...], ...] = field(default=SHEPP_LOGAN_ELLIPSES)
    extent: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError(f"SheppLoganSpec validation error, resolution={self.resolution} < 8")

    @property
    def grid(self):
        return Grid.square(self.resolution, *self.extent)


def shepp_logan(spec):
    """Sum of ellipse indicators at pixel centers, clipped to [0, 1].

    y grows with the row index, x with the column index.

    :param spec: Phantom definition
    :type spec: SheppLoganSpec
    :rtype: Field
    """
    grid = spec.grid
    y, x = grid.mesh()
    image = np.zeros(grid.shape)
    for intensity, a, b, x0, y0, angle in spec.ellipses:
        phi = np.deg2rad(angle)
        dx, dy = x - x0, y - y0
        along = dx * np.cos(phi) + dy * np.sin(phi)
        across = -dx * np.sin(phi) + dy * np.cos(phi)
        image[(along / a) ** 2 + (across / b) ** 2 <= 1.0] += intensity
    return Field(grid, np.clip(image, 0.0, 1.0))


def camera_image(pixels, extent=(-1.0, 1.0)):
    """Cameraman picture scaled to [0, 1] and resized to pixels x pixels."""
    image = skimage_data.camera().astype(float) / 255.0
    resized = resize(image, (pixels, pixels), anti_aliasing=True)
    return Field(Grid.square(pixels, *extent), np.clip(resized, 0.0, 1.0))
