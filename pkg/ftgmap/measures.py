#!/usr/bin/env python3

################################################
#
#   Gaussian measures and the Gamma hyper-prior
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from ftgmap.utils import JsonObject


logger = logging.getLogger(__name__)

# Cholesky jitter policy, relative to trace/d
JITTER_START = 1e-12
JITTER_STOP = 1e-6
JITTER_GROWTH = 10.0


################################################
#   Errors
################################################
class CovarianceError(ValueError):
    """Custom exception for error tracking."""


################################################
#   Functions
################################################
def squared_exponential_covariance(grid, gamma, nu):
    """C(x1, x2) = gamma * exp(-((x1 - x2)/nu)^2 / 2) on 1D grid points.

    :param grid: 1D grid
    :type grid: Grid
    :param gamma: Variance scale
    :type gamma: float
    :param nu: Correlation length
    :type nu: float
    :rtype: numpy.ndarray
    """
    if grid.dim != 1:
        raise ValueError("GaussianMeasure validation error, squared-exponential "
                         "covariance is defined on 1D grids only")
    if gamma <= 0 or nu <= 0:
        raise ValueError(f"GaussianMeasure validation error, gamma={gamma} and "
                         f"nu={nu} must be positive")
    x = grid.coordinates(0)
    distance = (x[:, None] - x[None, :]) / nu
    return gamma * np.exp(-0.5 * distance ** 2)


def cholesky_with_jitter(matrix):
    """Lower Cholesky factor, adding diagonal jitter if needed.

    Jitter starts at 1e-12 * trace/d and grows tenfold up to 1e-6 * trace/d.

    :raises CovarianceError: If the matrix is not SPD at the largest jitter
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise CovarianceError(f"covariance not SPD, shape {matrix.shape} is not square")
    if not np.all(np.isfinite(matrix)) or not np.allclose(matrix, matrix.T, rtol=1e-10, atol=0):
        raise CovarianceError("covariance not SPD, matrix is not symmetric and finite")
    try:
        return cholesky(matrix, lower=True)
    except LinAlgError:
        pass
    scale = np.trace(matrix) / matrix.shape[0]
    jitter = JITTER_START
    while scale > 0 and jitter <= JITTER_STOP * (1 + 1e-9):
        logger.warning("Cholesky failed, retrying with jitter %.1e * trace/d", jitter)
        try:
            return cholesky(matrix + jitter * scale * np.eye(matrix.shape[0]), lower=True)
        except LinAlgError:
            jitter *= JITTER_GROWTH
    raise CovarianceError("covariance not SPD")


def sample_gaussian(g, count, seed):
    """Draws mean + chol z, one per row, reproducible by seed."""
    return g.sample(count, np.random.default_rng(seed))


################################################
#   GaussianMeasure
################################################
class GaussianMeasure(object):
    """Gaussian measure with dense or diagonal covariance.

    Use the constructors `dense`, `diagonal` and `squared_exponential`.
    """

    def __init__(self, mean, covariance=None, variance=None):
        """
        :param mean: Mean vector
        :type mean: numpy.ndarray
        :param covariance: Dense SPD covariance
        :type covariance: numpy.ndarray, optional
        :param variance: Diagonal of a diagonal covariance
        :type variance: numpy.ndarray, optional
        """
        self.mean = np.array(mean, dtype=float).reshape(-1)
        if (covariance is None) == (variance is None):
            raise ValueError("GaussianMeasure validation error, give exactly one "
                             "of covariance or variance")
        self._covariance = None if covariance is None else np.array(covariance, dtype=float)
        self._variance = None if variance is None else np.array(variance, dtype=float).reshape(-1)
        self._validate()
    #end def

    def _validate(self):
        d = self.mean.size
        if self._variance is not None:
            if self._variance.size != d:
                raise ValueError("GaussianMeasure validation error, variance length "
                                 "does not match the mean")
            if not np.all(np.isfinite(self._variance)) or np.any(self._variance <= 0):
                raise CovarianceError("covariance not SPD")
        elif self._covariance.shape != (d, d):
            raise ValueError("GaussianMeasure validation error, covariance shape "
                             "does not match the mean")
    #end def

    @classmethod
    def dense(cls, mean, covariance):
        return cls(mean, covariance=covariance)

    @classmethod
    def diagonal(cls, mean, variance):
        mean = np.asarray(mean, dtype=float).reshape(-1)
        return cls(mean, variance=np.broadcast_to(np.asarray(variance, dtype=float), mean.shape))

    @classmethod
    def squared_exponential(cls, grid, gamma, nu, mean=None):
        mean = np.zeros(grid.size) if mean is None else mean
        return cls(mean, covariance=squared_exponential_covariance(grid, gamma, nu))

    @property
    def dim(self):
        return self.mean.size

    @property
    def is_diagonal(self):
        return self._variance is not None

    @property
    def variance(self):
        if self.is_diagonal:
            return self._variance.copy()
        return np.diag(self._covariance).copy()

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def covariance(self):
        if self.is_diagonal:
            return np.diag(self._variance)
        return self._covariance.copy()

    @cached_property
    def chol(self):
        """Lower Cholesky factor (vector of square roots if diagonal)."""
        if self.is_diagonal:
            return np.sqrt(self._variance)
        return cholesky_with_jitter(self._covariance)

    def color(self, noise):
        """Map standard normal rows to centered draws chol @ z."""
        if self.is_diagonal:
            return noise * self.chol
        return noise @ self.chol.T

    def sample(self, count, rng):
        """`count` independent draws as rows of a (count, d) array."""
        noise = rng.standard_normal((count, self.dim))
        return self.mean + self.color(noise)

    def precision_apply(self, values):
        """C^{-1} v for v of shape (..., d)."""
        values = np.asarray(values, dtype=float)
        if self.is_diagonal:
            return values / self._variance
        flat = values.reshape(-1, self.dim)
        solved = cho_solve((self.chol, True), flat.T).T
        return solved.reshape(values.shape)

    def quadratic(self, values):
        """1/2 ||u - mean||^2 in the covariance norm, batched over rows."""
        centered = np.asarray(values, dtype=float) - self.mean
        return 0.5 * np.sum(centered * self.precision_apply(centered), axis=-1)

    def log_density(self, values):
        """Unnormalized log density, -quadratic."""
        return -self.quadratic(values)

    def to_json(self) -> JsonObject:
        document = {"mean": self.mean}
        if self.is_diagonal:
            document["variance"] = self._variance
        else:
            document["covariance"] = self._covariance
        return document

    @classmethod
    def from_json(cls, document: JsonObject) -> GaussianMeasure:
        return cls(document["mean"], covariance=document.get("covariance"),
                   variance=document.get("variance"))

#end class


################################################
#   HyperPrior
################################################
@dataclass(frozen=True)
class HyperPrior:
    """Gamma(k, vartheta) hyper-prior on the regularization parameter."""

    k: float
    vartheta: float

    def __post_init__(self):
        if not self.k > 1:
            raise ValueError(f"HyperPrior validation error, k={self.k} must be > 1")
        if not self.vartheta > 0:
            raise ValueError(f"HyperPrior validation error, vartheta={self.vartheta} must be > 0")

    def log_density(self, lam):
        """(k - 1) log lambda - vartheta lambda, normalizer dropped."""
        return (self.k - 1.0) * np.log(lam) - self.vartheta * lam
