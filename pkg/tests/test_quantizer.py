"""Tests for the classical-to-quantum map, velocity functionals and the ordering gap."""

import numpy as np
import pytest

from hvquant.exceptions import UnsupportedHamiltonianError, UsageError
from hvquant.fields import Grid, RealField
from hvquant.quantizer import (
    EmParticle,
    LinearDrift,
    MeasureAngularZ,
    MeasureMomentum,
    MeasurePosition,
    MomentumPower,
    PdmQuadratic,
    Profile,
    Sum,
    classical_value,
    ordering_gap,
    quantize,
    velocity_functional,
)

# ============================================================================
# Profiles
# ============================================================================


def test_polynomial_profile_and_derivative():
    b = Profile.polynomial([1.0, 0.0, 0.5])
    q = np.array([-2.0, 0.0, 3.0])
    assert np.allclose(b(q), 1.0 + 0.5 * q**2)
    assert np.allclose(b.derivative(q), q)
    assert b.constant is None


def test_constant_profile_is_detected():
    b = Profile.polynomial([2.5, 0.0])
    assert b.constant == 2.5
    assert b.label == "2.5"
    assert np.all(b(np.zeros(4)) == 2.5)


# ============================================================================
# Quantization
# ============================================================================


@pytest.mark.parametrize(
    "H, descriptor",
    [
        (EmParticle(), "p^2/2m"),
        (EmParticle.harmonic(), "p^2/2m + eV(q)"),
        (PdmQuadratic(Profile.polynomial([0.0, 0.0, 1.0])), "p·B(q)·p"),
        (PdmQuadratic(Profile.polynomial([0.5])), "p^2/2m"),
        (LinearDrift(Profile.polynomial([1.0])), "p"),
        (LinearDrift(Profile.polynomial([1.0, 0.3])), "(B(q)·p+p·B(q))/2"),
        (MomentumPower(Profile.polynomial([1.0, 0.3]), 1), "(B(q)·p+p·B(q))/2"),
        (MomentumPower(Profile.polynomial([0.0, 0.0, 1.0]), 2), "p·B(q)·p"),
    ],
)
def test_descriptors_and_hermiticity(dirichlet_grid, H, descriptor):
    """Each single-particle Hamiltonian maps to one Hermitian ordering."""
    op = quantize(H, dirichlet_grid)
    assert op.descriptor == descriptor
    assert op.hermitian
    assert op.matrix.shape == (dirichlet_grid.size, dirichlet_grid.size)


def test_vector_potential_ordering_is_hermitian(dirichlet_grid):
    H = EmParticle.from_polynomials(vector_potential=[[0.0, 0.7]], potential=[0.0, 0.0, 0.5])
    op = quantize(H, dirichlet_grid)
    assert op.descriptor == "(p-(e/c)A(q))^2/2m + eV(q)"
    assert op.hermitian


def test_cubic_momentum_has_no_ordering(dirichlet_grid):
    """B(q)p^3 is outside what the replacement rules can order."""
    with pytest.raises(UnsupportedHamiltonianError):
        quantize(MomentumPower(Profile.polynomial([1.0]), 3), dirichlet_grid)


@pytest.mark.parametrize(
    "H, descriptor",
    [
        (MeasureMomentum(1.5), "g·p1·p2"),
        (MeasurePosition(1.5), "g·q1·p2"),
        (MeasureAngularZ(1.5, 0, 1, 2), "g·Lz1·p2"),
    ],
)
def test_measurement_hamiltonians_are_hermitian(H, descriptor):
    axes = [(12, -3.0, 3.0, "periodic")] * 3
    grid = Grid.from_bounds(axes)
    op = quantize(H, grid)
    assert op.descriptor == descriptor
    assert op.hermitian


def test_rank_too_small_for_measurement(dirichlet_grid):
    with pytest.raises(UsageError):
        quantize(MeasurePosition(1.0), dirichlet_grid)


def test_sum_combines_members(dirichlet_grid):
    H = Sum(((1.0, EmParticle()), (0.5, LinearDrift(Profile.polynomial([1.0])))))
    op = quantize(H, dirichlet_grid)
    free = quantize(EmParticle(), dirichlet_grid)
    drift = quantize(LinearDrift(Profile.polynomial([1.0])), dirichlet_grid)
    assert "p^2/2m" in op.descriptor and "p" in op.descriptor
    assert abs(op.matrix - (free.matrix + 0.5 * drift.matrix)).max() < 1e-12


def test_apply_matches_matrix(gaussian):
    op = quantize(EmParticle.harmonic(), gaussian.grid)
    applied = op.apply(gaussian)
    assert np.allclose(applied.values.ravel(), op.matrix @ gaussian.values.ravel())


# ============================================================================
# Ordering gap
# ============================================================================


def test_ordering_gap_is_hbar_squared():
    """p B p minus the symmetric ordering is hbar**2 for B = q**2."""
    grid = Grid.from_bounds([(512, -10.0, 10.0, "dirichlet")])
    hbar = 0.7
    gap = ordering_gap(Profile.polynomial([0.0, 0.0, 1.0]), grid, hbar)
    interior = gap.values[8:-8]
    assert np.max(np.abs(interior - hbar**2)) / hbar**2 < 1e-3


def test_ordering_gap_vanishes_for_constant_b():
    grid = Grid.from_bounds([(256, -10.0, 10.0, "dirichlet")])
    gap = ordering_gap(Profile.polynomial([2.0]), grid)
    assert np.max(np.abs(gap.values[8:-8])) < 1e-6


def test_ordering_gap_needs_one_dimension():
    grid = Grid.from_bounds([(16, -1.0, 1.0, "dirichlet")] * 2)
    with pytest.raises(UsageError):
        ordering_gap(Profile.polynomial([0.0, 0.0, 1.0]), grid)


# ============================================================================
# Velocity functionals
# ============================================================================


def test_phase_dependence():
    assert velocity_functional(EmParticle()).uses_phase
    assert not velocity_functional(MeasurePosition(1.0)).uses_phase
    assert not velocity_functional(LinearDrift(Profile.polynomial([1.0, 1.0]))).uses_phase


def test_free_velocity_is_momentum_over_mass(dirichlet_grid):
    q = dirichlet_grid.coordinates(0)
    S = RealField(dirichlet_grid, 0.5 * q**2)
    (v,) = velocity_functional(EmParticle(mass=2.0))(S)
    assert np.allclose(v.values, q / 2.0, atol=1e-9)


def test_classical_value_of_position_coupling():
    grid = Grid.from_bounds([(16, -1.0, 1.0, "dirichlet")] * 2)
    q1, q2 = grid.mesh()
    grad = [np.zeros_like(q1), np.full_like(q1, 3.0)]
    value = classical_value(MeasurePosition(2.0), grad, (q1, q2))
    assert np.allclose(value, 2.0 * q1 * 3.0)


def test_unknown_hamiltonian_rejected():
    with pytest.raises(UnsupportedHamiltonianError):
        velocity_functional(object())
