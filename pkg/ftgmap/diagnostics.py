#!/usr/bin/env python3

################################################
#
#   Reconstruction error metrics and MCMC
#   efficiency diagnostics
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import irfft, next_fast_len, rfft

from ftgmap.grid import Field


# Sliding window side and stabilizer factors of the SSIM index
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


################################################
#   Errors
################################################
class ZeroVarianceError(ValueError):
    """Custom exception for error tracking."""

    def __init__(self):
        super().__init__("zero variance")


class InfinitePsnrError(ValueError):
    """Custom exception for error tracking."""

    def __init__(self):
        super().__init__("infinite PSNR")


################################################
#   AcfResult
################################################
@dataclass
class AcfResult:
    lags: np.ndarray
    acf: np.ndarray
    iat: float
    ess: float
    length: int


################################################
#   Functions
################################################
def _check_same_grid(x, y, name):
    if x.grid != y.grid:
        raise ValueError(f"{name} validation error, fields live on different grids")


def rel_err(x, truth):
    """||x - truth||_2 / ||truth||_2.

    :raises ValueError: If truth has zero norm
    """
    _check_same_grid(x, truth, "rel_err")
    reference = np.linalg.norm(truth.values)
    if reference == 0:
        raise ValueError("rel_err validation error, truth has zero norm")
    return float(np.linalg.norm(x.values - truth.values) / reference)


def absolute_error(x, truth):
    _check_same_grid(x, truth, "absolute_error")
    return Field(truth.grid, np.abs(x.values - truth.values))


def _acf(series):
    """Biased sample autocorrelation at all lags via FFT."""
    x = np.asarray(series, dtype=float)
    if np.ptp(x) == 0:
        raise ZeroVarianceError()
    centered = x - x.mean()
    length = x.size
    size = next_fast_len(2 * length)
    spectrum = rfft(centered, size)
    autocovariance = irfft(spectrum * np.conj(spectrum), size)[:length] / length
    return autocovariance / autocovariance[0]


def _geyer_iat(acf):
    """rho = sum of acf over lags >= 1, truncated at the first non-positive pair sum."""
    count = acf.size // 2
    pairs = acf[:2 * count:2] + acf[1:2 * count:2]
    negative = np.flatnonzero(pairs <= 0)
    stop = negative[0] if negative.size else count
    return max(float(np.sum(pairs[:stop])) - 1.0, 0.0)


def autocorrelation(series, max_lag):
    """Sample ACF up to max_lag, integrated autocorrelation time and ESS.

    ess = K / (1 + 2 rho), rho from Geyer's initial positive sequence.

    :param series: Chain of one scalar quantity
    :type series: sequence(float)
    :param max_lag: Largest lag reported
    :type max_lag: int
    :rtype: AcfResult
    :raises ZeroVarianceError: If the series is constant
    """
    series = np.asarray(series, dtype=float).reshape(-1)
    length = series.size
    if not 1 <= max_lag < length:
        raise ValueError(f"autocorrelation validation error, max_lag={max_lag} "
                         f"outside [1, {length})")
    acf = _acf(series)
    iat = _geyer_iat(acf)
    return AcfResult(
        lags=np.arange(max_lag + 1),
        acf=acf[:max_lag + 1],
        iat=iat,
        ess=length / (1.0 + 2.0 * iat),
        length=length,
    )


def effective_sample_size(series):
    return autocorrelation(series, 1).ess


def ess_map(samples):
    """Per-coordinate ESS of a (K, d) chain. Constant coordinates count as 1."""
    samples = np.atleast_2d(samples)
    result = np.ones(samples.shape[1])
    for index in range(samples.shape[1]):
        try:
            result[index] = effective_sample_size(samples[:, index])
        except ZeroVarianceError:
            pass
    return result


def ssim(x, y, data_range=None):
    """Mean SSIM over all 8 x 8 windows.

    Window statistics are population moments. The dynamic range defaults to
    the joint range of both images.

    :raises ValueError: On 1D fields
    """
    _check_same_grid(x, y, "ssim")
    if x.grid.dim != 2:
        raise ValueError("ssim validation error, SSIM needs 2D image fields")
    first, second = x.as_array(), y.as_array()
    if min(first.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim validation error, image smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    if data_range is None:
        data_range = max(first.max(), second.max()) - min(first.min(), second.min())
        data_range = data_range if data_range > 0 else 1.0
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    shape = (SSIM_WINDOW, SSIM_WINDOW)
    windows_x = sliding_window_view(first, shape)
    windows_y = sliding_window_view(second, shape)
    mean_x = windows_x.mean(axis=(-2, -1))
    mean_y = windows_y.mean(axis=(-2, -1))
    var_x = windows_x.var(axis=(-2, -1))
    var_y = windows_y.var(axis=(-2, -1))
    cov = (windows_x * windows_y).mean(axis=(-2, -1)) - mean_x * mean_y
    local = ((2 * mean_x * mean_y + c1) * (2 * cov + c2)) / (
        (mean_x ** 2 + mean_y ** 2 + c1) * (var_x + var_y + c2))
    return float(local.mean())


def psnr(x, truth, peak=None):
    """10 log10(peak^2 / MSE), peak defaults to the truth maximum.

    :raises InfinitePsnrError: If x equals truth
    """
    _check_same_grid(x, truth, "psnr")
    peak = float(np.max(truth.values)) if peak is None else peak
    if not peak > 0:
        raise ValueError(f"psnr validation error, peak={peak} must be positive")
    mse = float(np.mean((x.values - truth.values) ** 2))
    if mse == 0:
        raise InfinitePsnrError()
    return 10.0 * np.log10(peak ** 2 / mse)


def line_profile(field, axis, position):
    """Values of a 2D field along the grid line nearest to `position`.

    axis=0 returns a row (fixed coordinate along axis 0), axis=1 a column.

    :return: Coordinates along the line and the field values
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    if field.grid.dim != 2:
        raise ValueError("line_profile validation error, needs a 2D field")
    index = int(np.argmin(np.abs(field.grid.coordinates(axis) - position)))
    image = field.as_array()
    if axis == 0:
        return field.grid.coordinates(1), image[index, :].copy()
    return field.grid.coordinates(0), image[:, index].copy()
