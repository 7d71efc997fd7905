#!/usr/bin/env python3

################################################
#
#   Linear forward models: deconvolution, heat
#   source, parallel-beam Radon, denoising
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.fft import fft, ifft, next_fast_len
from scipy.interpolate import interp1d
from scipy.linalg import lu_factor, lu_solve, toeplitz

from ftgmap.grid import Field, Grid, flatten


logger = logging.getLogger(__name__)

# Model labels
CONVOLUTION = "convolution"
HEAT_SOURCE = "heat_source"
RADON = "radon"
IDENTITY = "identity"

# Largest accepted condition number for the implicit heat step
MAX_HEAT_CONDITION = 1e12

# Segments shorter than this are dropped by the ray traversal
MIN_SEGMENT = 1e-14


################################################
#   LinearForwardModel
################################################
@dataclass(frozen=True, eq=False)
class LinearForwardModel:
    """Observation y = A u + offset + noise with noise N(0, sigma^2 I).

    `matrix` is a dense array or a scipy sparse matrix.
    """

    matrix: object
    grid: Grid
    label: str
    noise_sigma: Optional[float] = None
    offset: Optional[np.ndarray] = None
    parameters: Optional[dict] = None

    def __post_init__(self):
        n_obs, d = self.matrix.shape
        if n_obs < 1 or d != self.grid.size:
            raise ValueError(f"LinearForwardModel validation error, matrix shape "
                             f"{self.matrix.shape} for a grid of {self.grid.size} points")
        data = self.matrix.data if sparse.issparse(self.matrix) else self.matrix
        if not np.all(np.isfinite(data)):
            raise ValueError("LinearForwardModel validation error, non-finite entries")
        offset = np.zeros(n_obs) if self.offset is None else np.array(self.offset, dtype=float)
        if offset.shape != (n_obs,):
            raise ValueError("LinearForwardModel validation error, offset length mismatch")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "parameters", dict(self.parameters or {}))
        if self.noise_sigma is not None and not self.noise_sigma > 0:
            raise ValueError(f"LinearForwardModel validation error, sigma={self.noise_sigma} "
                             "must be positive")

    @property
    def n_obs(self):
        return self.matrix.shape[0]

    @property
    def sigma(self):
        if self.noise_sigma is None:
            raise ValueError("LinearForwardModel validation error, noise level not set")
        return self.noise_sigma

    @property
    def is_identity(self):
        return self.label == IDENTITY

    def with_noise(self, sigma):
        return replace(self, noise_sigma=float(sigma))

    def apply(self, u):
        """A u + offset for one vector or rows of a batch."""
        u = np.asarray(u, dtype=float)
        return np.asarray(self.matrix @ u.T).T + self.offset

    def apply_linear(self, u):
        """A u without the offset."""
        u = np.asarray(u, dtype=float)
        return np.asarray(self.matrix @ u.T).T

    def adjoint(self, r):
        r = np.asarray(r, dtype=float)
        return np.asarray(self.matrix.T @ r.T).T

    def dense(self):
        if sparse.issparse(self.matrix):
            return self.matrix.toarray()
        return np.asarray(self.matrix)

#end class


################################################
#   Model builders
################################################
def convolution_model(d, delta, extent=(0.0, 1.0)):
    """Midpoint quadrature of a Gaussian blur kernel.

    a_ij = h xi exp(-((i - j) h)^2 / (2 delta^2)), xi = 1/(delta sqrt(2 pi))

    :param d: Number of grid points
    :type d: int
    :param delta: Kernel width
    :type delta: float
    :param extent: Domain interval
    :type extent: tuple
    :rtype: LinearForwardModel
    """
    if delta <= 0:
        raise ValueError(f"LinearForwardModel validation error, delta={delta} must be positive")
    grid = Grid.line(d, *extent)
    h = grid.h[0]
    xi = 1.0 / (delta * np.sqrt(2.0 * np.pi))
    column = h * xi * np.exp(-((np.arange(d) * h) ** 2) / (2.0 * delta ** 2))
    return LinearForwardModel(toeplitz(column), grid, CONVOLUTION,
                              parameters={"delta": delta})


def dirichlet_laplacian(points, step):
    """Second-order central difference Laplacian, zero Dirichlet boundary."""
    main = -2.0 * np.ones(points)
    side = np.ones(points - 1)
    return (np.diag(main) + np.diag(side, 1) + np.diag(side, -1)) / step ** 2


def initial_temperature(x):
    return np.sin(np.pi * x)


def heat_source_model(d, N, T=1.0, r=12.0, w=0.5):
    """Source-to-final-temperature map of the theta-scheme heat equation.

    D+ V_{n+1} = D- V_n + f with D+ = I/dt - w Lap, D- = I/dt + (1-w) Lap.
    Returns A = H = sum_{i<N} D^i D+^{-1}, D = D+^{-1} D-, and the offset
    D^N V0 for V0 = sin(pi x).

    :param d: Interior nodes
    :type d: int
    :param N: Time steps
    :type N: int
    :param T: Final time
    :type T: float
    :param r: Rod length
    :type r: float
    :param w: Implicitness weight in [0, 1]
    :type w: float
    :rtype: LinearForwardModel
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"LinearForwardModel validation error, w={w} outside [0, 1]")
    if N < 1 or T <= 0 or r <= 0:
        raise ValueError("LinearForwardModel validation error, N, T and r must be positive")
    grid = Grid.line(d, 0.0, r)
    dt = T / N
    laplacian = dirichlet_laplacian(d, grid.h[0])
    identity = np.eye(d)
    implicit = identity / dt - w * laplacian
    explicit = identity / dt + (1.0 - w) * laplacian
    condition = np.linalg.cond(implicit)
    if not np.isfinite(condition) or condition > MAX_HEAT_CONDITION:
        raise ValueError(f"LinearForwardModel validation error, singular implicit step "
                         f"(condition number {condition:.3e})")
    factor = lu_factor(implicit)
    step = lu_solve(factor, explicit)
    term = lu_solve(factor, identity)
    matrix = term.copy()
    for _ in range(1, N):
        term = step @ term
        matrix += term
    offset = initial_temperature(grid.coordinates(0))
    for _ in range(N):
        offset = step @ offset
    return LinearForwardModel(matrix, grid, HEAT_SOURCE, offset=offset,
                              parameters={"N": N, "T": T, "r": r, "w": w})


def identity_model(grid, sigma=None):
    return LinearForwardModel(sparse.identity(grid.size, format="csr"), grid, IDENTITY,
                              noise_sigma=sigma)


################################################
#   Radon transform
################################################
def default_angles(count):
    """`count` angles uniform in [0, pi)."""
    return np.arange(count) * np.pi / count


def ray_offsets(grid, rays):
    """Offsets of parallel rays spread across the domain diagonal."""
    (a, b), _ = grid.extent
    radius = (b - a) / np.sqrt(2.0)
    return -radius + (np.arange(rays) + 0.5) * 2.0 * radius / rays


def _domain_center(grid):
    return np.array([np.mean(grid.extent[1]), np.mean(grid.extent[0])])


def ray_segments(grid, theta, offset):
    """Cells crossed by the line x cos(theta) + y sin(theta) = offset.

    Offsets are measured from the domain center. x runs along grid axis 1
    and y along axis 0. Parametric traversal of the grid lines.

    :return: Flat cell indices and intersection lengths
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    normal = np.array([np.cos(theta), np.sin(theta)])
    direction = np.array([-normal[1], normal[0]])
    origin = _domain_center(grid) + offset * normal
    lower = np.array([grid.extent[1][0], grid.extent[0][0]])
    upper = np.array([grid.extent[1][1], grid.extent[0][1]])
    steps = np.array([grid.h[1], grid.h[0]])
    counts = np.array([grid.cells[1], grid.cells[0]])

    t_enter, t_exit = -np.inf, np.inf
    crossings = []
    for axis in range(2):
        if abs(direction[axis]) < 1e-15:
            if not lower[axis] <= origin[axis] <= upper[axis]:
                return np.empty(0, dtype=int), np.empty(0)
            continue
        bounds = (np.array([lower[axis], upper[axis]]) - origin[axis]) / direction[axis]
        t_enter = max(t_enter, bounds.min())
        t_exit = min(t_exit, bounds.max())
        lines = lower[axis] + np.arange(counts[axis] + 1) * steps[axis]
        crossings.append((lines - origin[axis]) / direction[axis])
    if not t_exit > t_enter:
        return np.empty(0, dtype=int), np.empty(0)

    t = np.concatenate(crossings + [np.array([t_enter, t_exit])])
    t = np.unique(t[(t >= t_enter) & (t <= t_exit)])
    lengths = np.diff(t)
    middle = origin[:, None] + direction[:, None] * (0.5 * (t[1:] + t[:-1]))[None, :]
    cells = np.floor((middle - lower[:, None]) / steps[:, None]).astype(int)
    cells = np.clip(cells, 0, counts[:, None] - 1)
    keep = lengths > MIN_SEGMENT
    flat = cells[1, keep] * grid.cells[1] + cells[0, keep]
    return flat, lengths[keep]


def radon_model(pixels, angles, rays_per_angle, extent=(-1.0, 1.0)):
    """Parallel-beam Radon transform with exact intersection lengths.

    Rows are ordered angle-major: row = angle_index * rays_per_angle + ray.

    :param pixels: Pixels per axis
    :type pixels: int
    :param angles: Projection angles in radians
    :type angles: sequence of float
    :param rays_per_angle: Parallel rays per angle
    :type rays_per_angle: int
    :rtype: LinearForwardModel
    """
    angles = np.asarray(angles, dtype=float).reshape(-1)
    if angles.size < 1 or rays_per_angle < 1:
        raise ValueError("LinearForwardModel validation error, need at least one angle and ray")
    grid = Grid.square(pixels, *extent)
    offsets = ray_offsets(grid, rays_per_angle)
    rows, columns, values = [], [], []
    for angle_index, theta in enumerate(angles):
        for ray_index, offset in enumerate(offsets):
            cells, lengths = ray_segments(grid, theta, offset)
            rows.append(np.full(cells.size, angle_index * rays_per_angle + ray_index))
            columns.append(cells)
            values.append(lengths)
    matrix = sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(columns))),
        shape=(angles.size * rays_per_angle, grid.size),
    )
    logger.info("Radon matrix %s with %d nonzeros", matrix.shape, matrix.nnz)
    return LinearForwardModel(matrix, grid, RADON, parameters={
        "angles": angles.tolist(), "rays_per_angle": rays_per_angle, "offsets": offsets.tolist()})


def resample_sinogram(sinogram, offsets, target_offsets):
    """Linear interpolation of each projection onto other ray offsets."""
    interpolator = interp1d(offsets, sinogram, kind="linear", axis=1,
                            bounds_error=False, fill_value=0.0)
    return interpolator(target_offsets)


def ramp_filter(sinogram, spacing):
    """Band-limited ramp filter applied along the ray axis of each projection."""
    rays = sinogram.shape[1]
    size = next_fast_len(2 * rays)
    n = np.concatenate((np.arange(0, size // 2 + 1), np.arange(-(size - size // 2 - 1), 0)))
    kernel = np.zeros(size)
    kernel[0] = 1.0 / (4.0 * spacing ** 2)
    odd = n % 2 == 1
    kernel[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    response = fft(kernel)
    filtered = ifft(fft(sinogram, n=size, axis=1) * response, axis=1).real
    return filtered[:, :rays] * spacing


def fbp(sinogram, angles, offsets, grid):
    """Filtered back-projection with linear interpolation.

    :param sinogram: Projections, shape (angles, rays)
    :type sinogram: numpy.ndarray
    :param angles: Projection angles
    :type angles: sequence of float
    :param offsets: Ray offsets from the domain center (uniform spacing)
    :type offsets: numpy.ndarray
    :param grid: Reconstruction grid
    :type grid: Grid
    :rtype: Field
    """
    sinogram = np.asarray(sinogram, dtype=float).reshape(len(angles), -1)
    offsets = np.asarray(offsets, dtype=float)
    filtered = ramp_filter(sinogram, offsets[1] - offsets[0])
    y, x = grid.mesh()
    center = _domain_center(grid)
    x, y = x - center[0], y - center[1]
    image = np.zeros(grid.shape)
    for theta, projection in zip(angles, filtered):
        position = x * np.cos(theta) + y * np.sin(theta)
        image += interp1d(offsets, projection, kind="linear",
                          bounds_error=False, fill_value=0.0)(position)
    return Field(grid, image * np.pi / len(angles))


################################################
#   Synthetic data
################################################
def generate_data(model, truth, noise_percent, seed, restrict=None, sigma=None):
    """Noisy observation of a (fine grid) truth.

    sigma_used = noise_percent * max|A truth + b0| / 100 unless `sigma` is
    given. The clean observation is mapped to the coarse observation space
    by `restrict` before the noise draw.

    :param model: Fine grid forward model
    :type model: LinearForwardModel
    :param truth: Fine grid truth
    :type truth: Field
    :param noise_percent: Noise level relative to the output max norm
    :type noise_percent: float
    :param seed: Noise seed
    :type seed: int
    :param restrict: Fine to coarse observation map
    :type restrict: callable, optional
    :param sigma: Explicit noise standard deviation
    :type sigma: float, optional
    :return: Observation and noise standard deviation
    :rtype: tuple(numpy.ndarray, float)
    """
    if noise_percent < 0:
        raise ValueError(f"generate_data validation error, noise_percent={noise_percent} < 0")
    clean = model.apply(flatten(truth))
    sigma_used = noise_percent * np.max(np.abs(clean)) / 100.0 if sigma is None else float(sigma)
    observation = clean if restrict is None else restrict(clean)
    noise = np.random.default_rng(seed).standard_normal(observation.size)
    return observation + sigma_used * noise, float(sigma_used)


################################################
#   Reference sources
################################################
def deconvolution_source(x):
    """Piecewise light source on [0, 1]."""
    x = np.asarray(x, dtype=float)
    return np.select(
        [(x >= 0.1) & (x < 0.25), (x >= 0.35) & (x < 0.4), (x >= 0.5) & (x < 1.0)],
        [0.5, 0.25, np.sin(2.0 * np.pi * x) ** 4],
        default=0.0,
    )


def heat_source(x):
    """Piecewise heat source on [0, 12]."""
    x = np.asarray(x, dtype=float)
    return np.select(
        [
            (x >= 0.75) & (x < 2.0),
            (x >= 3.0) & (x < 5.0),
            (x >= 5.0) & (x < 6.0),
            (x >= 6.0) & (x < 7.0),
            (x >= 7.0) & (x < 9.0),
            (x >= 10.0) & (x < 11.25),
        ],
        [0.5, -(x - 3.0) * (x - 5.0), x - 5.0, 7.0 - x, -(x - 7.0) * (x - 9.0), 0.5],
        default=0.0,
    )


TRUTHS = {
    "deconvolution": (deconvolution_source, (0.0, 1.0)),
    "heat_source": (heat_source, (0.0, 12.0)),
}


def paper_truth(kind, grid):
    """Reference source of a 1D experiment evaluated at the grid points.

    :param kind: 'deconvolution' or 'heat_source'
    :type kind: str
    :param grid: 1D grid on the experiment's domain
    :type grid: Grid
    :rtype: Field
    """
    if kind not in TRUTHS:
        raise ValueError(f"paper_truth validation error, unknown kind {kind}")
    source, extent = TRUTHS[kind]
    if grid.dim != 1 or not np.allclose(grid.extent[0], extent):
        raise ValueError(f"paper_truth validation error, {kind} is defined on {list(extent)}, "
                         f"got {grid.extent}")
    return Field(grid, source(grid.coordinates(0)))
