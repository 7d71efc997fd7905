#!/usr/bin/env python3

################################################
#
#   Uniform 1D/2D grids and discretized fields
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from ftgmap.utils import CSV_FLOAT_FORMAT, JsonObject


################################################
#   Errors
################################################
class RefinementError(ValueError):
    """Custom exception for error tracking."""


################################################
#   Grid
################################################
@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on a 1D interval or a 2D rectangle.

    Axis 0 is the row axis of a 2D field, values are stored row-major.
    Points sit at cell midpoints a + (i + 1/2) h.
    """

    extent: Tuple[Tuple[float, float], ...]
    cells: Tuple[int, ...]

    def __post_init__(self):
        extent = tuple((float(a), float(b)) for a, b in self.extent)
        cells = tuple(int(count) for count in self.cells)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)
        self._validate()

    def _validate(self):
        if len(self.cells) not in (1, 2) or len(self.extent) != len(self.cells):
            raise ValueError("Grid validation error, dim must be 1 or 2 "
                             "with one interval per axis")
        for (a, b), count in zip(self.extent, self.cells):
            if count < 2:
                raise ValueError(f"Grid validation error, axis with {count} points (need >= 2)")
            if not b > a:
                raise ValueError(f"Grid validation error, empty interval [{a}, {b}]")

    @classmethod
    def line(cls, cells, a=0.0, b=1.0):
        return cls(((a, b),), (cells,))

    @classmethod
    def square(cls, cells, a=-1.0, b=1.0):
        return cls(((a, b), (a, b)), (cells, cells))

    @property
    def dim(self):
        return len(self.cells)

    @property
    def shape(self):
        return self.cells

    @property
    def size(self):
        """Total point count d."""
        return int(np.prod(self.cells))

    @property
    def h(self):
        return tuple((b - a) / count for (a, b), count in zip(self.extent, self.cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def coordinates(self, axis=0):
        (a, _), step = self.extent[axis], self.h[axis]
        return a + (np.arange(self.cells[axis]) + 0.5) * step

    def mesh(self):
        """Point coordinates per axis, each shaped like the grid."""
        return np.meshgrid(*[self.coordinates(axis) for axis in range(self.dim)], indexing="ij")

    def refine(self, factor):
        return Grid(self.extent, tuple(count * factor for count in self.cells))

    def coarsen(self, factor):
        if factor < 1 or any(count % factor for count in self.cells):
            raise RefinementError(
                f"incompatible refinement factor {factor} for cells {self.cells}"
            )
        return Grid(self.extent, tuple(count // factor for count in self.cells))

    def to_json(self) -> JsonObject:
        return {"extent": [list(pair) for pair in self.extent], "cells": list(self.cells)}

    @classmethod
    def from_json(cls, document: JsonObject) -> Grid:
        return cls(tuple(tuple(pair) for pair in document["extent"]), tuple(document["cells"]))


################################################
#   Field
################################################
@dataclass(frozen=True, eq=False)
class Field:
    """Real values on a Grid, flattened row-major."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise ValueError(f"Field validation error, {values.size} values "
                             f"for a grid of {self.grid.size} points")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field validation error, non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_array(self):
        return self.values.reshape(self.grid.shape)

    def __len__(self):
        return self.values.size


################################################
#   Functions
################################################
def flatten(field):
    """Row-major copy of the field values."""
    return np.array(field.values)


def unflatten(values, grid):
    return Field(grid, np.asarray(values, dtype=float).reshape(-1))


def downsample(field, factor):
    """Block mean over factor**dim fine values per coarse value.

    :param field: Fine field
    :type field: Field
    :param factor: Refinement factor per axis
    :type factor: int
    :return: Coarse field
    :rtype: Field
    :raises RefinementError: If an axis length is not divisible by factor
    """
    coarse = field.grid.coarsen(factor)
    blocks = []
    for count in coarse.cells:
        blocks.extend([count, factor])
    array = field.as_array().reshape(blocks)
    return Field(coarse, array.mean(axis=tuple(range(1, 2 * coarse.dim, 2))))


def write_field_csv(field, path):
    """One value per line, grid metadata as a JSON comment header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, field.values, fmt=CSV_FLOAT_FORMAT,
               header=json.dumps(field.grid.to_json(), sort_keys=True))
    return path


def read_field_csv(path):
    with open(path) as handle:
        header = handle.readline()
    if not header.startswith("#"):
        raise ValueError(f"Field validation error, {path} has no grid header")
    grid = Grid.from_json(json.loads(header.lstrip("#").strip()))
    return Field(grid, np.loadtxt(path, comments="#", ndmin=1))
