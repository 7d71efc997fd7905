#!/usr/bin/env python3

################################################
#
#   Discrete fractional gradient (Grunwald
#   formulas) and fractional total variation
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from ftgmap.grid import Field


# Smoothing used inside the transport-map objective
DEFAULT_EPS = 1e-8

# Orders above this use the shifted formula
SHIFT_THRESHOLD = 1.0


################################################
#   GrunwaldWeights
################################################
@dataclass(frozen=True, eq=False)
class GrunwaldWeights:
    """Weights w_0..w_J of the Grunwald formula for order alpha."""

    alpha: float
    weights: np.ndarray

    @property
    def shifted(self):
        return self.alpha > SHIFT_THRESHOLD

    @property
    def count(self):
        return self.weights.size


def grunwald_weights(alpha, count):
    """Weights from the recurrence w_0 = 1, w_j = (1 - (alpha + 1)/j) w_{j-1}.

    :param alpha: Fractional order in (0, 2]
    :type alpha: float
    :param count: Number of weights
    :type count: int
    :rtype: GrunwaldWeights
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"GrunwaldWeights validation error, alpha={alpha} outside (0, 2]")
    if count < 1:
        raise ValueError(f"GrunwaldWeights validation error, count={count} < 1")
    j = np.arange(1, count)
    weights = np.concatenate(([1.0], np.cumprod(1.0 - (alpha + 1.0) / j)))
    weights.setflags(write=False)
    return GrunwaldWeights(float(alpha), weights)


def grunwald_matrix(points, step, weights):
    """Dense 1D fractional gradient operator on `points` nodes.

    Row l, for l = 1..points-2, evaluates

        (sum_j w_j u_{l-j} - sum_j w_j u_{l+j}) / (2 h^alpha)

    with both sums truncated at the first and last node. The shifted
    variant moves both stencils one node outwards. The two end rows are
    zero, so end nodes add nothing to the seminorm. Away from the end rows
    the operator is (L - L^T) / (2 h^alpha) with L lower Toeplitz.

    :param points: Number of nodes along the axis
    :type points: int
    :param step: Grid spacing h
    :type step: float
    :param weights: Grunwald weights, count >= points + 1
    :type weights: GrunwaldWeights
    :rtype: numpy.ndarray
    """
    if weights.count < points + 1:
        raise ValueError(f"GrunwaldWeights validation error, {weights.count} weights "
                         f"for an axis of {points} points (need {points + 1})")
    w = weights.weights
    zeros = np.zeros(points)
    if weights.shifted:
        first_row = zeros.copy()
        first_row[0] = w[1]
        if points > 1:
            first_row[1] = w[0]
        lower = toeplitz(w[1:points + 1], first_row)
    else:
        first_row = zeros.copy()
        first_row[0] = w[0]
        lower = toeplitz(w[:points], first_row)
    operator = (lower - lower.T) / (2.0 * step ** weights.alpha)
    operator[[0, -1]] = 0.0
    return operator


################################################
#   FractionalTV
################################################
class FractionalTV(object):
    """Fractional gradient and FTV seminorm for one grid and order.

    Works on flattened values with any number of leading batch axes.
    """

    def __init__(self, grid, weights, eps=DEFAULT_EPS):
        if eps <= 0:
            raise ValueError(f"FractionalTV validation error, eps={eps} must be positive")
        self.grid = grid
        self.weights = weights
        self.eps = eps
        self.operators = [
            grunwald_matrix(points, step, weights)
            for points, step in zip(grid.cells, grid.h)
        ]
    #end def

    def gradient(self, values):
        """Per-axis gradient components, shape (dim, ..., d)."""
        values = np.asarray(values, dtype=float)
        batch = values.shape[:-1]
        array = values.reshape(batch + self.grid.shape)
        if self.grid.dim == 1:
            components = [array @ self.operators[0].T]
        else:
            components = [
                self.operators[0] @ array,
                array @ self.operators[1].T,
            ]
        return np.stack([component.reshape(batch + (-1,)) for component in components])

    def adjoint(self, components):
        """Adjoint of `gradient`, maps (dim, ..., d) back to (..., d)."""
        components = np.asarray(components, dtype=float)
        batch = components.shape[1:-1]
        shaped = components.reshape((self.grid.dim,) + batch + self.grid.shape)
        if self.grid.dim == 1:
            result = shaped[0] @ self.operators[0]
        else:
            result = self.operators[0].T @ shaped[0] + shaped[1] @ self.operators[1]
        return result.reshape(batch + (-1,))

    def magnitude(self, values):
        return np.sqrt(np.sum(self.gradient(values) ** 2, axis=0))

    def norm(self, values):
        """Exact seminorm, sum of |grad| times cell volume."""
        return np.sum(self.magnitude(values), axis=-1) * self.grid.cell_volume

    def smoothed(self, values, eps=None):
        eps = self._eps(eps)
        magnitude = self.magnitude(values)
        return np.sum(np.sqrt(magnitude ** 2 + eps ** 2) - eps, axis=-1) * self.grid.cell_volume

    def smoothed_with_gradient(self, values, eps=None):
        """Smoothed seminorm and its gradient with respect to the values."""
        eps = self._eps(eps)
        components = self.gradient(values)
        root = np.sqrt(np.sum(components ** 2, axis=0) + eps ** 2)
        value = np.sum(root - eps, axis=-1) * self.grid.cell_volume
        gradient = self.adjoint(components / root) * self.grid.cell_volume
        return value, gradient

    def _eps(self, eps):
        eps = self.eps if eps is None else eps
        if eps <= 0:
            raise ValueError(f"FractionalTV validation error, eps={eps} must be positive")
        return eps

#end class


################################################
#   Functions
################################################
def fractional_gradient(u, weights):
    """One gradient Field per grid axis.

    :param u: Field to differentiate
    :type u: Field
    :param weights: Grunwald weights, count >= longest axis + 1
    :type weights: GrunwaldWeights
    :rtype: list(Field)
    """
    components = FractionalTV(u.grid, weights).gradient(u.values)
    return [Field(u.grid, component) for component in components]


def ftv_norm(u, weights):
    return float(FractionalTV(u.grid, weights).norm(u.values))


def ftv_norm_smoothed(u, weights, eps=DEFAULT_EPS):
    """Replaces |t| by sqrt(t^2 + eps^2) - eps in every cell."""
    return float(FractionalTV(u.grid, weights, eps).smoothed(u.values))
