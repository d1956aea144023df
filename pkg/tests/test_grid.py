"""Tests for the cell-centered grid operators."""
import math

import numpy as np
import pytest

from thermoch.grid import Grid, GridError


def test_laplacian_of_constant_is_zero(grid16):
    assert np.array_equal(grid16.laplacian(grid16.constant(3.7)), np.zeros(16))


def _cosine_laplacian_error(n):
    grid = Grid.uniform(1, n)
    (x,) = grid.cell_centers()
    f = np.cos(np.pi * x)
    return grid.norm_linf(grid.laplacian(f) + np.pi ** 2 * f)


def test_laplacian_second_order_on_neumann_eigenfunction():
    coarse, fine = _cosine_laplacian_error(64), _cosine_laplacian_error(128)
    order = math.log(coarse / fine, 2)
    assert 1.8 <= order <= 2.2


def test_laplacian_telescopes(rng):
    for dim in (1, 2):
        grid = Grid.uniform(dim, 12)
        f = rng.standard_normal(grid.shape)
        assert abs(grid.integrate(grid.laplacian(f))) <= 1e-12 * grid.norm_l2(f)


def test_summation_by_parts(rng):
    grid = Grid(n=(7, 9), length=(1.0, 2.0))
    f, g = rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
    lhs = grid.integrate(f * grid.laplacian(g))
    rhs = -grid.face_integral(grid.face_gradient(f) * grid.face_gradient(g))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_two_dimensional_layout_is_row_major_with_x_first():
    grid = Grid(n=(8, 5), length=(1.0, 1.0))
    x, _ = grid.cell_centers()
    line = Grid(n=(8,), length=(1.0,))
    (x1,) = line.cell_centers()
    lap = grid.laplacian(np.cos(np.pi * x))
    expected = line.laplacian(np.cos(np.pi * x1))
    for j in range(5):
        assert np.allclose(lap[:, j], expected, atol=1e-12)


def test_two_dimensional_eigenfunction():
    grid = Grid.uniform(2, 32)
    x, y = grid.cell_centers()
    f = np.cos(np.pi * x) * np.cos(np.pi * y)
    assert grid.norm_linf(grid.laplacian(f) + 2 * np.pi ** 2 * f) < 0.05


def test_div_coeff_grad_of_constant_is_zero(rng, grid16):
    a = 0.5 + rng.random(16)
    for averaging in ("harmonic", "arithmetic"):
        assert np.array_equal(grid16.div_coeff_grad(a, grid16.constant(2.0), averaging), np.zeros(16))


def test_div_coeff_grad_constant_coefficient_matches_laplacian(rng, grid16):
    f = rng.standard_normal(16)
    assert np.allclose(grid16.div_coeff_grad(grid16.constant(2.5), f), 2.5 * grid16.laplacian(f))


def test_div_coeff_grad_rejects_nonpositive_coefficient(grid16):
    a = grid16.constant(1.0)
    a[3] = 0.0
    with pytest.raises(GridError):
        grid16.div_coeff_grad(a, grid16.constant(1.0))


def test_harmonic_face_average():
    grid = Grid.uniform(1, 4)
    assert np.allclose(grid.face_average(np.array([1.0, 3.0, 3.0, 1.0]), "harmonic"), [1.5, 3.0, 1.5])
    assert np.allclose(grid.face_average(np.array([1.0, 3.0, 3.0, 1.0]), "arithmetic"), [2.0, 3.0, 2.0])


def test_integrate_and_mean():
    grid = Grid.uniform(1, 10)
    assert grid.integrate(grid.constant(3.0)) == pytest.approx(3.0)
    assert grid.mean(grid.constant(3.0)) == pytest.approx(3.0)
    spike = np.zeros(10)
    spike[4] = 1.0
    assert grid.integrate(spike) == pytest.approx(0.1)
    assert grid.mean(spike) == 0.1


@pytest.mark.parametrize("n", [4, 10, 64, 128, (6, 5), (32, 32)])
@pytest.mark.parametrize("c", [0.1, 0.3, 0.7, -1.3, 1e-8])
def test_mean_of_constant_is_exact(n, c):
    grid = Grid(n=n, length=(1.0,) * len(n)) if isinstance(n, tuple) else Grid.uniform(1, n)
    assert grid.mean(grid.constant(c)) == c


@pytest.mark.parametrize("n", [4, 7, 16, 33])
def test_full_period_cosine_integrates_to_zero(n):
    grid = Grid.uniform(1, n)
    (x,) = grid.cell_centers()
    assert abs(grid.integrate(np.cos(2 * np.pi * x))) <= 1e-12


def test_norms():
    grid = Grid.uniform(1, 32)
    zero = grid.constant(0.0)
    assert grid.norm_l2(zero) == grid.norm_linf(zero) == grid.h1_seminorm_sq(zero) == 0.0
    c = grid.constant(-2.5)
    assert grid.norm_l2(c) == pytest.approx(2.5)
    assert grid.norm_linf(c) == 2.5
    assert grid.h1_seminorm_sq(c) == 0.0
    assert grid.norm_lp(c, 3.0) == pytest.approx(2.5)


def test_h1_seminorm_of_linear_field():
    # boundary faces carry no flux, so only the n - 1 interior faces contribute
    grid = Grid.uniform(1, 32)
    (x,) = grid.cell_centers()
    assert grid.h1_seminorm_sq(x) == pytest.approx(31 / 32, abs=1e-12)


@pytest.mark.parametrize("n, length", [((3,), (1.0,)), ((8,), (0.0,)), ((8, 8, 8), (1.0,) * 3), ((8,), (1.0, 1.0))])
def test_invalid_grids(n, length):
    with pytest.raises(GridError):
        Grid(n=n, length=length)


def test_shape_mismatch(grid16):
    with pytest.raises(GridError):
        grid16.laplacian(np.zeros(15))
