#!/usr/bin/env python3

################################################
#
#   Hierarchical FTG posterior
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ftgmap.fractional import DEFAULT_EPS, FractionalTV
from ftgmap.measures import GaussianMeasure


logger = logging.getLogger(__name__)

# Largest accepted condition number of the posterior precision
MAX_CONDITION = 1e14


################################################
#   Errors
################################################
class SingularSystemError(ValueError):
    """Custom exception for error tracking."""

    def __init__(self, message, condition):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


################################################
#   Functions
################################################
def map_lambda(ftv_value, hyper):
    """Stationary point lambda = 2(k - 1)/(ftv + 2 vartheta).

    :param ftv_value: FTV seminorm of the current estimate
    :type ftv_value: float
    :param hyper: Gamma hyper-prior
    :type hyper: HyperPrior
    :rtype: float
    """
    if ftv_value < 0:
        raise ValueError(f"HyperPrior validation error, ftv_value={ftv_value} is negative")
    return 2.0 * (hyper.k - 1.0) / (ftv_value + 2.0 * hyper.vartheta)


def partial_lambda(lam, ftv_value, hyper):
    """Derivative of the negative log posterior in lambda."""
    return hyper.vartheta + 0.5 * ftv_value - (hyper.k - 1.0) / lam


def conjugate_posterior(model, gaussian, y):
    """Exact Gaussian posterior of the linear model without the FTV term.

    precision = A^T A / sigma^2 + C0^{-1}
    mean      = precision^{-1} (A^T (y - b0) / sigma^2 + C0^{-1} m0)

    :param model: Forward model with noise level set
    :type model: LinearForwardModel
    :param gaussian: Gaussian prior
    :type gaussian: GaussianMeasure
    :param y: Observation
    :type y: numpy.ndarray
    :rtype: GaussianMeasure
    :raises SingularSystemError: If the precision cannot be factorized
    """
    sigma2 = model.sigma ** 2
    shifted = np.asarray(y, dtype=float) - model.offset
    if model.is_identity and gaussian.is_diagonal:
        prior_precision = 1.0 / gaussian.variance
        variance = 1.0 / (1.0 / sigma2 + prior_precision)
        mean = variance * (shifted / sigma2 + prior_precision * gaussian.mean)
        return GaussianMeasure.diagonal(mean, variance)
    matrix = model.dense()
    if gaussian.is_diagonal:
        prior_precision = np.diag(1.0 / gaussian.variance)
    else:
        prior_precision = gaussian.precision_apply(np.eye(gaussian.dim))
        prior_precision = 0.5 * (prior_precision + prior_precision.T)
    precision = matrix.T @ matrix / sigma2 + prior_precision
    rhs = matrix.T @ shifted / sigma2 + prior_precision @ gaussian.mean
    try:
        factor = cho_factor(precision, lower=True)
    except LinAlgError:
        raise SingularSystemError("singular posterior precision", np.linalg.cond(precision))
    condition = np.linalg.cond(precision)
    if condition > MAX_CONDITION:
        raise SingularSystemError("ill-conditioned posterior precision", condition)
    covariance = cho_solve(factor, np.eye(gaussian.dim))
    covariance = 0.5 * (covariance + covariance.T)
    return GaussianMeasure.dense(cho_solve(factor, rhs), covariance)


################################################
#   HierarchicalPosterior
################################################
class HierarchicalPosterior(object):
    """Unnormalized posterior of (u, lambda) with FTG prior and Gamma hyper-prior.

    log pi(u, lambda) = (k-1) log lambda - Phi(u) - 1/2 ||u - m0||^2_C0
                        - lambda/2 ||u||_TV^alpha - vartheta lambda

    `weights=None` drops the FTV term (pure Gaussian posterior).
    All u arguments accept a single vector or a batch of rows.
    """

    def __init__(self, model, data, gaussian, weights, hyper, eps=DEFAULT_EPS):
        self.model = model
        self.data = np.array(data, dtype=float).reshape(-1)
        self.gaussian = gaussian
        self.weights = weights
        self.hyper = hyper
        self.eps = eps
        self.tv = None if weights is None else FractionalTV(model.grid, weights, eps)
        self._validate()
    #end def

    def _validate(self):
        if self.model.noise_sigma is None:
            raise ValueError("HierarchicalPosterior validation error, model has no noise level")
        if self.data.size != self.model.n_obs:
            raise ValueError(f"HierarchicalPosterior validation error, {self.data.size} "
                             f"observations for a model with {self.model.n_obs} rows")
        if self.gaussian.dim != self.model.grid.size:
            raise ValueError("HierarchicalPosterior validation error, prior dimension "
                             "does not match the grid")
    #end def

    @property
    def dim(self):
        return self.model.grid.size

    @property
    def grid(self):
        return self.model.grid

    def data_misfit(self, u):
        """Phi(u) = ||A u + b0 - y||^2 / (2 sigma^2)."""
        residual = self.model.apply(u) - self.data
        return 0.5 * np.sum(residual ** 2, axis=-1) / self.model.sigma ** 2

    def ftv(self, u, smoothed=False, eps=None):
        if self.tv is None:
            return np.zeros(np.shape(u)[:-1])
        if smoothed:
            return self.tv.smoothed(u, eps)
        return self.tv.norm(u)

    def ftg_penalty(self, u, lam, smoothed=False):
        """J(u; lambda) = lambda/2 times the (smoothed) FTV seminorm."""
        _check_lambda(lam)
        return 0.5 * lam * self.ftv(u, smoothed)

    def potential(self, u, lam):
        """Phi(u) + J(u; lambda) with the exact seminorm."""
        return self.data_misfit(u) + self.ftg_penalty(u, lam)

    def log_density(self, u, lam, smoothed=False):
        _check_lambda(lam)
        return (
            self.hyper.log_density(lam)
            - self.data_misfit(u)
            - self.gaussian.quadratic(u)
            - self.ftg_penalty(u, lam, smoothed)
        )

    def negative_log_density_with_gradient(self, u, lam, eps=None):
        """Smoothed -log pi and its gradient in u, batched over rows."""
        _check_lambda(lam)
        u = np.asarray(u, dtype=float)
        residual = self.model.apply(u) - self.data
        sigma2 = self.model.sigma ** 2
        value = 0.5 * np.sum(residual ** 2, axis=-1) / sigma2 + self.gaussian.quadratic(u)
        gradient = self.model.adjoint(residual) / sigma2
        gradient = gradient + self.gaussian.precision_apply(u - self.gaussian.mean)
        if self.tv is not None:
            tv_value, tv_gradient = self.tv.smoothed_with_gradient(u, eps)
            value = value + 0.5 * lam * tv_value
            gradient = gradient + 0.5 * lam * tv_gradient
        return value - self.hyper.log_density(lam), gradient

    def grad_log_density(self, u, lam, eps=None):
        return -self.negative_log_density_with_gradient(u, lam, eps)[1]

#end class


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"HierarchicalPosterior validation error, lambda={lam} must be positive")
