"""Tests for grids, fields, stencils, quadrature, interpolation and dumps."""

import numpy as np
import pytest

from hvquant.exceptions import OutOfDomainError, UsageError
from hvquant.fields import (
    Axis,
    ComplexField,
    Grid,
    RealField,
    derivative,
    dump_field,
    integrate,
    interpolate,
    laplacian,
    load_field,
)
from hvquant.models import BoundaryKind

# ============================================================================
# Axes and grids
# ============================================================================


def test_axis_spacing_depends_on_boundary():
    """Periodic axes exclude the upper end point, dirichlet axes include it."""
    periodic = Axis(10, 0.0, 1.0, "periodic")
    dirichlet = Axis(11, 0.0, 1.0, "dirichlet")
    assert periodic.spacing == pytest.approx(0.1)
    assert dirichlet.spacing == pytest.approx(0.1)
    assert periodic.coordinates[-1] == pytest.approx(0.9)
    assert dirichlet.coordinates[-1] == pytest.approx(1.0)
    assert periodic.boundary is BoundaryKind.PERIODIC


@pytest.mark.parametrize(
    "n, lower, upper",
    [(4, 0.0, 1.0), (16, 1.0, 1.0), (16, 2.0, -2.0)],
)
def test_axis_rejects_bad_bounds(n, lower, upper):
    """Too few points or an empty interval are usage errors."""
    with pytest.raises(UsageError):
        Axis(n, lower, upper)


def test_grid_shape_and_mesh():
    """Mesh arrays use ij indexing and carry the grid shape."""
    grid = Grid.from_bounds([(16, -1.0, 1.0, "dirichlet"), (8, 0.0, 1.0, "periodic")])
    assert grid.rank == 2
    assert grid.shape == (16, 8)
    assert grid.size == 128
    x, y = grid.mesh()
    assert x.shape == (16, 8)
    assert np.all(x[:, 0] == grid.coordinates(0))
    assert np.all(y[0, :] == grid.coordinates(1))


def test_quadrature_weights_sum_to_volume():
    """Trapezoid and rectangle weights integrate a constant exactly."""
    grid = Grid.from_bounds([(21, -1.0, 1.0, "dirichlet"), (16, 0.0, 3.0, "periodic")])
    assert grid.quadrature_weights().sum() == pytest.approx(2.0 * 3.0)


def test_bad_axis_index():
    grid = Grid.from_bounds([(16, 0.0, 1.0, "dirichlet")])
    with pytest.raises(UsageError):
        grid.coordinates(1)


# ============================================================================
# Fields
# ============================================================================


def test_field_values_are_read_only(periodic_grid):
    """Samples cannot be modified in place."""
    f = RealField(periodic_grid, np.ones(periodic_grid.shape))
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_field_rejects_non_finite_and_wrong_shape(periodic_grid):
    bad = np.ones(periodic_grid.shape)
    bad[3] = np.nan
    with pytest.raises(UsageError):
        RealField(periodic_grid, bad)
    with pytest.raises(UsageError):
        RealField(periodic_grid, np.ones(7))


def test_with_values_keeps_kind(periodic_grid):
    psi = ComplexField(periodic_grid, np.ones(periodic_grid.shape))
    other = psi.with_values(2j * np.ones(periodic_grid.shape))
    assert isinstance(other, ComplexField)
    assert other.grid == psi.grid


# ============================================================================
# Stencils and quadrature
# ============================================================================


def test_periodic_derivatives_of_sine(periodic_grid):
    """4th-order stencils on a smooth periodic function."""
    x = periodic_grid.coordinates(0)
    f = np.sin(x)
    assert np.max(np.abs(derivative(f, periodic_grid, 0, 1) - np.cos(x))) < 1e-6
    assert np.max(np.abs(derivative(f, periodic_grid, 0, 2) + np.sin(x))) < 1e-6


def test_dirichlet_derivatives_exact_for_cubics():
    """Interior and one-sided edge stencils are exact for low-order polynomials."""
    grid = Grid.from_bounds([(16, -1.0, 1.0, "dirichlet")])
    q = grid.coordinates(0)
    f = q**3 - 2.0 * q
    assert np.allclose(derivative(f, grid, 0, 1), 3.0 * q**2 - 2.0, atol=1e-9)
    assert np.allclose(derivative(f, grid, 0, 2), 6.0 * q, atol=1e-8)


def test_laplacian_sums_axes():
    grid = Grid.from_bounds([(32, -1.0, 1.0, "dirichlet"), (32, -1.0, 1.0, "dirichlet")])
    x, y = grid.mesh()
    lap = laplacian(RealField(grid, x**2 + 3.0 * y**2))
    assert np.allclose(lap.values, 8.0, atol=1e-8)


def test_derivative_order_validated(periodic_grid):
    with pytest.raises(UsageError):
        derivative(np.zeros(periodic_grid.shape), periodic_grid, 0, 3)


def test_integrate_gaussian():
    grid = Grid.from_bounds([(201, -10.0, 10.0, "dirichlet")])
    q = grid.coordinates(0)
    assert integrate(RealField(grid, np.exp(-(q**2)))) == pytest.approx(np.sqrt(np.pi), rel=1e-10)


# ============================================================================
# Interpolation
# ============================================================================


def test_interpolate_linear_function_exactly():
    grid = Grid.from_bounds([(11, 0.0, 1.0, "dirichlet"), (11, 0.0, 2.0, "dirichlet")])
    x, y = grid.mesh()
    f = RealField(grid, 2.0 * x - y + 1.0)
    points = np.array([[0.13, 0.71], [0.5, 1.99], [0.0, 0.0]])
    expected = 2.0 * points[:, 0] - points[:, 1] + 1.0
    assert np.allclose(interpolate(f, points), expected)
    assert interpolate(f, np.array([0.25, 0.5])) == pytest.approx(1.0)


def test_interpolate_wraps_periodic_axes(periodic_grid):
    x = periodic_grid.coordinates(0)
    f = RealField(periodic_grid, np.cos(x))
    inside = interpolate(f, np.array([[1.0]]))
    wrapped = interpolate(f, np.array([[1.0 + 2.0 * np.pi]]))
    assert np.allclose(inside, wrapped)


def test_interpolate_outside_dirichlet_domain(dirichlet_grid):
    f = RealField(dirichlet_grid, np.zeros(dirichlet_grid.shape))
    with pytest.raises(OutOfDomainError):
        interpolate(f, np.array([9.0]))


# ============================================================================
# Binary dumps
# ============================================================================


def test_field_dump_and_load(tmp_path):
    """A complex field on a mixed-boundary grid survives the binary format."""
    grid = Grid.from_bounds([(8, -1.0, 1.0, "dirichlet"), (12, 0.0, 2.0, "periodic")])
    x, y = grid.mesh()
    psi = ComplexField(grid, np.exp(1j * x) * np.cos(y))
    path = dump_field(psi, tmp_path / "psi.hvq")
    assert path.read_bytes()[:4] == b"HVQ1"
    loaded = load_field(path)
    assert isinstance(loaded, ComplexField)
    assert loaded.grid == grid
    assert np.array_equal(loaded.values, psi.values)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.bin"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(UsageError):
        load_field(path)
