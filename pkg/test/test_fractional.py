#################################################################
#   Libraries
#################################################################
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import binom

from ftgmap.fractional import (
    FractionalTV,
    fractional_gradient,
    ftv_norm,
    ftv_norm_smoothed,
    grunwald_matrix,
    grunwald_weights,
)
from ftgmap.grid import Field, Grid

#################################################################
#   Tests
#################################################################
ORDERS = [0.2, 0.5, 0.8, 0.9, 0.95, 0.99, 1.0, 1.01, 1.05, 1.1, 1.2, 1.5, 1.8, 2.0]


def central_difference(function, x, step=1e-6):
    gradient = np.zeros_like(x)
    for index in range(x.size):
        shift = np.zeros_like(x)
        shift[index] = step
        gradient[index] = (function(x + shift) - function(x - shift)) / (2.0 * step)
    return gradient


def grunwald_loop(points, step, alpha):
    """Row by row evaluation of the truncated Grunwald sums."""
    w = grunwald_weights(alpha, points + 1).weights
    shift = 1 if alpha > 1.0 else 0
    matrix = np.zeros((points, points))
    for row in range(1, points - 1):
        for j in range(points + 1):
            if 0 <= row - j + shift < points:
                matrix[row, row - j + shift] += w[j]
            if 0 <= row + j - shift < points:
                matrix[row, row + j - shift] -= w[j]
    return matrix / (2.0 * step ** alpha)


@pytest.mark.parametrize("alpha", ORDERS)
def test_weights_match_signed_binomials(alpha):
    weights = grunwald_weights(alpha, 51)
    expected = (-1.0) ** np.arange(51) * binom(alpha, np.arange(51))
    np.testing.assert_allclose(weights.weights, expected, rtol=0, atol=1e-12)
    assert weights.shifted == (alpha > 1.0)


@pytest.mark.parametrize("alpha", [0.0, -0.5, 2.5])
def test_weights_reject_orders_outside_range(alpha):
    with pytest.raises(ValueError, match="GrunwaldWeights validation error"):
        grunwald_weights(alpha, 10)


def test_order_one_is_centered_difference():
    grid = Grid.line(4, 0.0, 1.0)
    u = Field(grid, [0.0, 1.0, 2.0, 3.0])
    (gradient,) = fractional_gradient(u, grunwald_weights(1.0, 5))
    h = grid.h[0]
    assert gradient.values[1] == pytest.approx(1.0 / h)
    assert gradient.values[2] == pytest.approx(1.0 / h)


def test_order_one_step_field():
    grid = Grid.line(4, 0.0, 1.0)
    u = Field(grid, [0.0, 0.0, 1.0, 1.0])
    weights = grunwald_weights(1.0, 5)
    (gradient,) = fractional_gradient(u, weights)
    np.testing.assert_allclose(gradient.values, [0.0, 2.0, 2.0, 0.0])
    # |2| + |2| at the two interior nodes, times h
    assert ftv_norm(u, weights) == pytest.approx(1.0)


def test_order_one_matches_centered_difference_tv():
    rng = np.random.default_rng(0)
    grid = Grid.line(20, 0.0, 2.0)
    values = rng.standard_normal(20)
    h = grid.h[0]
    centered = (values[2:] - values[:-2]) / (2.0 * h)
    assert ftv_norm(Field(grid, values), grunwald_weights(1.0, 21)) == pytest.approx(
        h * np.sum(np.abs(centered)), rel=1e-12
    )


def test_order_two_operator_vanishes():
    matrix = grunwald_matrix(10, 0.1, grunwald_weights(2.0, 11))
    np.testing.assert_allclose(matrix, 0.0, atol=1e-12)


@pytest.mark.parametrize("alpha", ORDERS)
def test_operator_matches_truncated_sums(alpha):
    matrix = grunwald_matrix(12, 0.05, grunwald_weights(alpha, 13))
    np.testing.assert_allclose(matrix, grunwald_loop(12, 0.05, alpha), rtol=1e-12, atol=1e-9)


def test_end_rows_are_zero():
    matrix = grunwald_matrix(8, 0.1, grunwald_weights(0.5, 9))
    assert not matrix[[0, -1]].any()
    assert matrix[1:-1].any()


def test_spike_gradient_matches_dense_product():
    grid = Grid.line(8)
    spike = np.eye(8)[4]
    weights = grunwald_weights(0.5, 9)
    (gradient,) = fractional_gradient(Field(grid, spike), weights)
    expected = grunwald_loop(8, grid.h[0], 0.5) @ spike
    np.testing.assert_allclose(gradient.values, expected, rtol=1e-12, atol=1e-12)


def test_too_few_weights():
    with pytest.raises(ValueError, match="need 11"):
        grunwald_matrix(10, 0.1, grunwald_weights(0.5, 10))


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_constant_field_has_zero_gradient(alpha):
    grid = Grid.line(8)
    u = Field(grid, np.full(8, 3.0))
    weights = grunwald_weights(alpha, 9)
    (gradient,) = fractional_gradient(u, weights)
    np.testing.assert_allclose(gradient.values, 0.0, atol=1e-10)
    assert ftv_norm(u, weights) == pytest.approx(0.0, abs=1e-10)


def test_constant_image_has_zero_gradient():
    grid = Grid.square(6)
    u = Field(grid, np.full(36, -2.0))
    for component in fractional_gradient(u, grunwald_weights(1.0, 7)):
        np.testing.assert_allclose(component.values, 0.0, atol=1e-10)


def test_two_dimensional_gradient_components():
    grid = Grid.square(6, 0.0, 1.0)
    y, x = grid.mesh()
    u = Field(grid, x)
    weights = grunwald_weights(1.0, 7)
    along_rows, along_columns = fractional_gradient(u, weights)
    # x varies along axis 1 only
    np.testing.assert_allclose(along_rows.values, 0.0, atol=1e-12)
    np.testing.assert_allclose(along_columns.as_array()[:, 1:-1], 1.0, atol=1e-12)
    np.testing.assert_allclose(along_columns.as_array()[:, [0, -1]], 0.0, atol=1e-12)


def test_adjoint():
    rng = np.random.default_rng(1)
    grid = Grid.square(5)
    tv = FractionalTV(grid, grunwald_weights(1.3, 6))
    u = rng.standard_normal(grid.size)
    p = rng.standard_normal((2, grid.size))
    assert np.sum(tv.gradient(u) * p) == pytest.approx(np.sum(u * tv.adjoint(p)), rel=1e-10)


def test_batched_norm_matches_single():
    rng = np.random.default_rng(2)
    grid = Grid.square(4)
    tv = FractionalTV(grid, grunwald_weights(0.7, 5))
    batch = rng.standard_normal((3, grid.size))
    np.testing.assert_allclose(tv.norm(batch), [tv.norm(row) for row in batch])


@given(
    st.lists(st.floats(-5.0, 5.0), min_size=6, max_size=6),
    st.floats(-4.0, 4.0),
    st.sampled_from([0.3, 1.0, 1.7]),
)
def test_ftv_is_absolutely_homogeneous(values, scale, alpha):
    grid = Grid.line(6)
    weights = grunwald_weights(alpha, 7)
    base = ftv_norm(Field(grid, values), weights)
    scaled = ftv_norm(Field(grid, scale * np.asarray(values)), weights)
    assert scaled == pytest.approx(abs(scale) * base, rel=1e-9, abs=1e-9)


def test_smoothed_ftv_is_below_exact_and_close():
    rng = np.random.default_rng(3)
    u = Field(Grid.line(10), rng.standard_normal(10))
    weights = grunwald_weights(0.8, 11)
    exact = ftv_norm(u, weights)
    smoothed = ftv_norm_smoothed(u, weights, eps=1e-8)
    assert smoothed <= exact
    assert smoothed == pytest.approx(exact, abs=1e-7)


@pytest.mark.parametrize("grid", [Grid.line(12), Grid.square(3)])
@pytest.mark.parametrize("alpha", [0.6, 1.0, 1.4])
def test_smoothed_ftv_gradient_matches_finite_differences(grid, alpha):
    rng = np.random.default_rng(4)
    tv = FractionalTV(grid, grunwald_weights(alpha, max(grid.cells) + 1), eps=1e-3)
    for _ in range(20):
        u = rng.standard_normal(grid.size)
        _, gradient = tv.smoothed_with_gradient(u)
        numeric = central_difference(tv.smoothed, u)
        assert np.linalg.norm(gradient - numeric) <= 1e-5 * np.linalg.norm(numeric)


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        FractionalTV(Grid.line(4), grunwald_weights(1.0, 5), eps=0.0)
