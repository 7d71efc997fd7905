#!/usr/bin/env python3

################################################
#
#   Diagonal transport maps built by sample
#   average KL minimization, alternating with
#   the regularization parameter update
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import BFGS, LinearConstraint, minimize

from ftgmap.fractional import DEFAULT_EPS, ftv_norm
from ftgmap.grid import Field
from ftgmap.measures import GaussianMeasure, HyperPrior
from ftgmap.posterior import conjugate_posterior, map_lambda
from ftgmap.utils import JsonObject, check_format_version, stamp_version


logger = logging.getLogger(__name__)

# SAA samples evaluated together
SAA_CHUNK = 256

# Lower bound of map derivatives in the constrained (degree > 1) problem
MIN_DERIVATIVE = 1e-10


################################################
#   Errors
################################################
class MonotonicityError(ValueError):
    """Custom exception for error tracking."""

    def __init__(self, coordinate):
        super().__init__(f"map is not monotone in coordinate {coordinate}")
        self.coordinate = coordinate


class MapBuildError(RuntimeError):
    """Custom exception for error tracking."""

    def __init__(self, message, trace):
        super().__init__(f"{message}, objective trace {list(trace)}")
        self.trace = list(trace)


################################################
#   DiagonalMap
################################################
@dataclass(frozen=True, eq=False)
class DiagonalMap:
    """T_k(x) = a_k0 + a_k1 x_k + ... + a_kq x_k^q, one row of coeffs per k."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] < 2:
            raise ValueError("DiagonalMap validation error, coeffs must be d x (q + 1), q >= 1")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("DiagonalMap validation error, non-finite coefficients")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def linear(cls, offset, scale):
        return cls(np.column_stack((offset, scale)))

    @classmethod
    def identity(cls, d, degree=1):
        coeffs = np.zeros((d, degree + 1))
        coeffs[:, 1] = 1.0
        return cls(coeffs)

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @property
    def dim(self):
        return self.coeffs.shape[0]

    @property
    def offset(self):
        return self.coeffs[:, 0]

    @property
    def scale(self):
        if self.degree != 1:
            raise ValueError("DiagonalMap validation error, scale is defined for degree 1")
        return self.coeffs[:, 1]

    def _powers(self, x):
        return np.asarray(x, dtype=float)[..., None] ** np.arange(self.degree + 1)

    def apply(self, x):
        return np.sum(self._powers(x) * self.coeffs, axis=-1)

    def derivative(self, x):
        """Diagonal of the Jacobian at x."""
        orders = np.arange(1, self.degree + 1)
        return np.sum(self._powers(x)[..., :-1] * self.coeffs[:, 1:] * orders, axis=-1)

    def log_det_jacobian(self, x):
        return np.sum(np.log(self.derivative(x)), axis=-1)

    def check_monotone(self, x):
        """Raise MonotonicityError naming the first coordinate with T_k' <= 0."""
        bad = np.any(np.atleast_2d(self.derivative(x)) <= 0, axis=0)
        if np.any(bad):
            raise MonotonicityError(int(np.argmax(bad)))

#end class


################################################
#   Builder config and result
################################################
@dataclass
class MapBuilderConfig:
    """Settings of the alternating-direction map construction."""

    saa_count: int
    reference: GaussianMeasure
    hyper: Optional[HyperPrior] = None
    eps: float = DEFAULT_EPS
    outer_iters: int = 5
    step_tol: float = 1e-6
    grad_tol: float = 1e-8
    max_evals: int = 1000
    degree: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.saa_count < 2:
            raise ValueError(f"MapBuilderConfig validation error, M={self.saa_count} < 2")
        if self.outer_iters < 1:
            raise ValueError(f"MapBuilderConfig validation error, K={self.outer_iters} < 1")
        if self.degree < 1:
            raise ValueError(f"MapBuilderConfig validation error, degree={self.degree} < 1")
        if self.max_evals < 0 or self.step_tol <= 0 or self.eps <= 0:
            raise ValueError("MapBuilderConfig validation error, tolerances must be positive")

    def to_json(self) -> JsonObject:
        return {
            "M": self.saa_count,
            "outer_iters": self.outer_iters,
            "step_tol": self.step_tol,
            "grad_tol": self.grad_tol,
            "max_evals": self.max_evals,
            "degree": self.degree,
            "eps": self.eps,
            "seed": self.seed,
        }


@dataclass
class MapBuildResult:
    map: DiagonalMap
    lam: float
    lam_last_iteration: float
    objective_trace: List[float]
    pushforward_mean: np.ndarray
    seed: int = 0
    config: JsonObject = field(default_factory=dict)

    def to_json(self) -> JsonObject:
        return stamp_version({
            "kind": "diagonal_map",
            "coeffs": self.map.coeffs,
            "lambda": self.lam,
            "lambda_last_iteration": self.lam_last_iteration,
            "objective_trace": list(self.objective_trace),
            "pushforward_mean": self.pushforward_mean,
            "seed": self.seed,
            "config": self.config,
        })

    @classmethod
    def from_json(cls, document: JsonObject) -> MapBuildResult:
        check_format_version(document, "MapBuildResult")
        return cls(
            map=DiagonalMap(document["coeffs"]),
            lam=document["lambda"],
            lam_last_iteration=document["lambda_last_iteration"],
            objective_trace=list(document["objective_trace"]),
            pushforward_mean=np.asarray(document["pushforward_mean"], dtype=float),
            seed=document.get("seed", 0),
            config=document.get("config", {}),
        )


################################################
#   Functions
################################################
def apply_map(map, x):
    return map.apply(x)


def initial_map(posterior_gaussian, prior):
    """Diagonal map pushing `prior` to the marginals of `posterior_gaussian`.

    a_1 = sqrt(Sigma_p[k, k] / C0[k, k]),  a_0 = mu_p - a_1 m0

    :rtype: DiagonalMap
    """
    scale = np.sqrt(posterior_gaussian.variance / prior.variance)
    return DiagonalMap.linear(posterior_gaussian.mean - scale * prior.mean, scale)


def pushforward_measure(map, reference):
    """Gaussian image of `reference` under a degree-1 map."""
    if map.degree != 1:
        raise ValueError("DiagonalMap validation error, Gaussian pushforward needs degree 1")
    scale = map.scale
    mean = map.offset + scale * reference.mean
    if reference.is_diagonal:
        return GaussianMeasure.diagonal(mean, scale ** 2 * reference.variance)
    return GaussianMeasure.dense(mean, scale[:, None] * reference.covariance * scale[None, :])


def saa_mean(map, samples):
    """(1/M) sum_i T(x_i), accumulated in chunks."""
    samples = np.atleast_2d(samples)
    total = np.zeros(map.dim)
    for start in range(0, samples.shape[0], SAA_CHUNK):
        total += map.apply(samples[start:start + SAA_CHUNK]).sum(axis=0)
    return total / samples.shape[0]


def update_lambda(map, samples, hyper, weights, grid):
    """lambda = 2(k - 1)/(||E T(x)||_TV^alpha + 2 vartheta) with the SAA mean.

    `weights=None` means no FTV term.
    """
    mean = saa_mean(map, samples)
    ftv_value = 0.0 if weights is None else ftv_norm(Field(grid, mean), weights)
    return map_lambda(ftv_value, hyper)


def _saa_terms(coeffs, posterior, lam, samples, eps, strict=True):
    """SAA objective and its gradient with respect to coeffs."""
    degree = coeffs.shape[1] - 1
    orders = np.arange(1, degree + 1)
    value = 0.0
    gradient = np.zeros_like(coeffs)
    for start in range(0, samples.shape[0], SAA_CHUNK):
        chunk = samples[start:start + SAA_CHUNK]
        powers = chunk[..., None] ** np.arange(degree + 1)
        mapped = np.sum(powers * coeffs, axis=-1)
        derivative = np.sum(powers[..., :-1] * coeffs[:, 1:] * orders, axis=-1)
        if strict:
            bad = np.any(derivative <= 0, axis=0)
            if np.any(bad):
                raise MonotonicityError(int(np.argmax(bad)))
        else:
            derivative = np.maximum(derivative, MIN_DERIVATIVE)
        negative_log, state_gradient = posterior.negative_log_density_with_gradient(mapped, lam, eps)
        value += np.sum(negative_log) - np.sum(np.log(derivative))
        gradient += np.einsum("md,mdj->dj", state_gradient, powers)
        gradient[:, 1:] -= np.einsum("md,mdj->dj", 1.0 / derivative, powers[..., :-1] * orders)
    count = samples.shape[0]
    return value / count, gradient / count


def saa_objective(map, posterior, lam, samples, eps=DEFAULT_EPS):
    """(1/M) sum_i [-log pi(T(x_i), lambda) - log det grad T(x_i)], smoothed FTV.

    :raises MonotonicityError: If T_k' <= 0 at any sample
    """
    return float(_saa_terms(map.coeffs, posterior, lam, np.atleast_2d(samples), eps)[0])


def saa_objective_gradient(map, posterior, lam, samples, eps=DEFAULT_EPS):
    """Gradient of `saa_objective` with respect to the d x (q + 1) coefficients."""
    return _saa_terms(map.coeffs, posterior, lam, np.atleast_2d(samples), eps)[1]


class _StepMonitor(object):
    """Stops the optimizer once an iteration moves less than `tol` (max norm)."""

    def __init__(self, start, tol):
        self.previous = np.array(start)
        self.tol = tol
        self.converged = False

    def __call__(self, intermediate_result):
        step = np.max(np.abs(intermediate_result.x - self.previous))
        self.previous = np.array(intermediate_result.x)
        if step < self.tol:
            self.converged = True
            raise StopIteration


def _minimize_linear(current, posterior, lam, samples, config):
    """Unconstrained L-BFGS-B over (a_0, b) with a_1 = exp(b)."""
    d = current.dim

    def objective(theta):
        coeffs = np.column_stack((theta[:d], np.exp(theta[d:])))
        value, gradient = _saa_terms(coeffs, posterior, lam, samples, config.eps)
        return value, np.concatenate((gradient[:, 0], gradient[:, 1] * coeffs[:, 1]))

    start = np.concatenate((current.offset, np.log(current.scale)))
    monitor = _StepMonitor(start, config.step_tol)
    result = minimize(objective, start, jac=True, method="L-BFGS-B", callback=monitor,
                      options={"maxiter": config.max_evals, "maxfun": config.max_evals,
                               "gtol": config.grad_tol, "ftol": 1e-15})
    theta = result.x
    return DiagonalMap.linear(theta[:d], np.exp(theta[d:])), result, monitor


def _monotonicity_matrix(samples, degree):
    """Rows (i, k): dT_k/dx_k at sample i as a linear function of the coefficients."""
    count, d = samples.shape
    orders = np.arange(1, degree + 1)
    values = (samples[..., None] ** (orders - 1)) * orders
    rows = np.repeat(np.arange(count * d), degree)
    columns = (np.arange(d)[:, None] * (degree + 1) + orders[None, :])
    columns = np.broadcast_to(columns, (count, d, degree)).reshape(-1)
    return sparse.csr_matrix((values.reshape(-1), (rows, columns)),
                             shape=(count * d, d * (degree + 1)))


def _minimize_polynomial(current, posterior, lam, samples, config):
    """Trust-region interior point with explicit per-sample monotonicity."""
    shape = current.coeffs.shape

    def objective(theta):
        value, gradient = _saa_terms(theta.reshape(shape), posterior, lam, samples,
                                     config.eps, strict=False)
        return value, gradient.reshape(-1)

    constraint = LinearConstraint(_monotonicity_matrix(samples, current.degree),
                                  MIN_DERIVATIVE, np.inf)
    start = current.coeffs.reshape(-1)
    monitor = _StepMonitor(start, config.step_tol)
    result = minimize(objective, start, jac=True, hess=BFGS(), method="trust-constr",
                      constraints=[constraint], callback=monitor,
                      options={"xtol": config.step_tol, "maxiter": config.max_evals,
                               "gtol": config.grad_tol})
    candidate = DiagonalMap(result.x.reshape(shape))
    candidate.check_monotone(samples)
    return candidate, result, monitor


def build_map(posterior, config):
    """Alternating-direction construction of a diagonal transport map.

    Each outer iteration first sets lambda from the SAA mean of the current
    map, then minimizes the SAA objective over the coefficients at that
    lambda. The first map is the diagonal restriction of the conjugate
    (FTV free) posterior. An outer step that would increase the objective is
    discarded and ends the loop. Lambda is recomputed once after the loop.

    :param posterior: Target posterior
    :type posterior: HierarchicalPosterior
    :param config: Builder settings
    :type config: MapBuilderConfig
    :rtype: MapBuildResult
    :raises MapBuildError: If the objective becomes non-finite
    """
    hyper = config.hyper or posterior.hyper
    rng = np.random.default_rng(config.seed)
    samples = config.reference.sample(config.saa_count, rng)

    conjugate = conjugate_posterior(posterior.model, posterior.gaussian, posterior.data)
    current = initial_map(conjugate, config.reference)
    if config.degree > 1:
        padded = np.zeros((current.dim, config.degree + 1))
        padded[:, :2] = current.coeffs
        current = DiagonalMap(padded)

    trace, lam = [], None
    for iteration in range(config.outer_iters):
        lam_next = update_lambda(current, samples, hyper, posterior.weights, posterior.grid)
        candidate, result, monitor = current, None, None
        if config.max_evals > 0:
            if config.degree == 1:
                candidate, result, monitor = _minimize_linear(current, posterior, lam_next,
                                                              samples, config)
            else:
                candidate, result, monitor = _minimize_polynomial(current, posterior, lam_next,
                                                                  samples, config)
        value = saa_objective(candidate, posterior, lam_next, samples, config.eps)
        if not np.isfinite(value):
            raise MapBuildError("inner optimizer produced a non-finite objective", trace)
        if trace and value > trace[-1]:
            logger.warning("outer iteration %d raised the objective (%.10g > %.10g), stopping",
                           iteration, value, trace[-1])
            break
        current, lam = candidate, lam_next
        trace.append(value)
        logger.info("outer iteration %d: lambda=%.6g objective=%.10g%s", iteration, lam, value,
                    "" if result is None else f" ({result.message})")
        if iteration > 0 and monitor is not None and monitor.converged and result.nit <= 1:
            break
    #end for

    final_lam = update_lambda(current, samples, hyper, posterior.weights, posterior.grid)
    logger.info("final lambda=%.6g (last inner lambda %.6g)", final_lam, lam)
    return MapBuildResult(
        map=current,
        lam=final_lam,
        lam_last_iteration=lam,
        objective_trace=trace,
        pushforward_mean=saa_mean(current, samples),
        seed=config.seed,
        config=config.to_json(),
    )
