"""Tests for the hidden-variable branches, lambda laws and fast-flip dynamics."""

import numpy as np
import pytest

from hvquant.exceptions import StabilityError, UnsupportedHamiltonianError, UsageError
from hvquant.fields import Axis, ComplexField, Grid, RealField, integrate
from hvquant.hidden import (
    BranchState,
    LambdaDistribution,
    antithetic_pair,
    average_branches,
    ball_surface_points,
    branch_rhs,
    branch_step,
    check_phase_symmetry,
    evolve_branches,
    flip_ensemble,
    flip_evolve,
    fluctuation_identity_residual,
    sample_lambdas,
)
from hvquant.models import EvolutionMode, LambdaKind
from hvquant.quantizer import (
    EmParticle,
    MeasureAngularZ,
    MeasureLinearObservable,
    MeasureMomentum,
    MeasurePosition,
    MomentumPower,
    Profile,
)
from hvquant.quantum import (
    MadelungState,
    evolve_madelung,
    gaussian_packet,
    madelung_rhs,
    to_madelung,
)


@pytest.fixture
def smooth_state(periodic_grid) -> MadelungState:
    """Positive periodic density with a non-trivial phase."""
    x = periodic_grid.coordinates(0)
    rho = np.exp(0.2 * np.cos(x))
    rho = rho / integrate(RealField(periodic_grid, rho))
    return MadelungState(RealField(periodic_grid, rho), RealField(periodic_grid, 0.3 * np.sin(x)))


@pytest.fixture
def oscillator_state() -> MadelungState:
    grid = Grid((Axis(64, -4.5, 4.5, "dirichlet"),))
    psi = ComplexField(grid, gaussian_packet(grid, [0.3], [np.sqrt(0.5)]))
    return to_madelung(psi)


# ============================================================================
# Lambda laws
# ============================================================================


def test_two_point_draws_are_signed_hbar_and_reproducible():
    dist = LambdaDistribution(hbar=0.5)
    a = sample_lambdas(dist, 10_000, seed=3)
    b = sample_lambdas(dist, 10_000, seed=3)
    assert set(np.unique(a)) == {-0.5, 0.5}
    assert np.array_equal(a, b)
    assert abs(np.mean(a > 0) - 0.5) < 0.02


def test_ball_surface_signs_are_balanced():
    points = ball_surface_points(1000, hbar=2.0, seed=1)
    assert np.allclose(np.linalg.norm(points, axis=1), 2.0)
    lams = sample_lambdas(LambdaDistribution(LambdaKind.BALL_SURFACE), 10_000, seed=2024)
    assert np.all(np.abs(lams) == 1.0)
    assert abs(np.mean(lams > 0) - 0.5) < 0.02


def test_generalized_two_point_mean():
    dist = LambdaDistribution(LambdaKind.GENERALIZED_TWO_POINT, value=2.0, weight=0.8)
    assert dist.magnitude == 2.0
    assert dist.mean == pytest.approx(1.2)
    lams = sample_lambdas(dist, 20_000, seed=5)
    assert np.mean(lams) == pytest.approx(1.2, abs=0.05)


@pytest.mark.parametrize("kwargs", [{"weight": 1.0}, {"weight": 0.0}, {"value": -1.0}])
def test_invalid_distribution_rejected(kwargs):
    with pytest.raises(UsageError):
        LambdaDistribution(LambdaKind.GENERALIZED_TWO_POINT, **kwargs)


def test_sample_count_must_be_positive():
    with pytest.raises(UsageError):
        sample_lambdas(LambdaDistribution(), 0)


# ============================================================================
# Branch pair
# ============================================================================


def test_branch_average_reproduces_madelung_rhs(smooth_state):
    """The lambda-odd diffusion cancels and lambda**2 matches hbar**2."""
    H = EmParticle()
    plus = branch_rhs(H, BranchState(1.0, smooth_state.S, smooth_state.rho))
    minus = branch_rhs(H, BranchState(-1.0, smooth_state.S, smooth_state.rho))
    drho, dS = madelung_rhs(H, smooth_state)
    assert np.max(np.abs(0.5 * (plus[0] + minus[0]) - drho)) < 1e-12
    assert np.max(np.abs(0.5 * (plus[1] + minus[1]) - dS)) < 1e-12
    assert np.max(np.abs(plus[0] - minus[0])) > 1e-3


def test_fluctuation_identity_holds_to_discretization_error():
    grid = Grid((Axis(512, 0.0, 2.0 * np.pi, "periodic"),))
    x = grid.coordinates(0)
    rho = np.exp(0.2 * np.cos(x) + 0.1 * np.sin(2 * x) + 0.15 * np.cos(3 * x))
    assert fluctuation_identity_residual(RealField(grid, rho)) < 1e-6


def test_fluctuation_identity_needs_positive_density(periodic_grid):
    x = periodic_grid.coordinates(0)
    with pytest.raises(UsageError):
        fluctuation_identity_residual(RealField(periodic_grid, np.sin(x) ** 2))


def test_shared_branches_keep_identical_phases(smooth_state):
    H = EmParticle()
    dt, steps = 2e-4, 50
    run = evolve_branches(H, smooth_state, dt, steps, EvolutionMode.SHARED_RHO, output_every=10)
    assert len(run.times) == 6
    assert check_phase_symmetry(run) == 0.0

    averaged = average_branches(run.plus[-1], run.minus[-1])
    reference = smooth_state
    for _ in range(steps):
        reference = evolve_madelung(H, reference, dt)
    assert np.allclose(averaged.rho.values, reference.rho.values, atol=1e-12)
    assert np.allclose(averaged.S.values, reference.S.values, atol=1e-12)


def test_independent_branches_split_densities(smooth_state):
    run = evolve_branches(EmParticle(), smooth_state, 2e-4, 20, EvolutionMode.INDEPENDENT_RHO)
    final_plus, final_minus = run.plus[-1], run.minus[-1]
    assert np.max(np.abs(final_plus.rho.values - final_minus.rho.values)) > 1e-6
    averaged = average_branches(final_plus, final_minus)
    assert integrate(averaged.rho) == pytest.approx(1.0, abs=1e-10)


def test_average_needs_opposite_lambdas(smooth_state):
    b = BranchState(1.0, smooth_state.S, smooth_state.rho)
    with pytest.raises(UsageError):
        average_branches(b, b)


def test_diffusive_cfl_violation(smooth_state):
    with pytest.raises(StabilityError) as info:
        branch_step(EmParticle(), BranchState(1.0, smooth_state.S, smooth_state.rho), 1e-2)
    assert info.value.criterion == "diffusive"


def _smooth_state(grid: Grid) -> MadelungState:
    coords = grid.mesh()
    rho = np.exp(0.2 * np.cos(coords[0]) + 0.1 * np.sin(coords[-1]))
    S = 0.3 * np.sin(coords[0]) * np.cos(coords[-1]) + 0.2 * np.cos(coords[1])
    return MadelungState(RealField(grid, rho), RealField(grid, S))


def _periodic(rank: int, n: int) -> Grid:
    return Grid(tuple(Axis(n, -np.pi, np.pi, "periodic") for _ in range(rank)))


COSINE = Profile(lambda q: 1.0 + 0.3 * np.cos(q), lambda q: -0.3 * np.sin(q))


@pytest.mark.parametrize(
    "H, rank",
    [
        (MeasureMomentum(1.5), 2),
        (MeasureLinearObservable(0.7, COSINE), 2),
        (MeasureAngularZ(0.8), 3),
    ],
    ids=["momentum", "linear-observable", "angular"],
)
def test_measurement_branch_average_reproduces_madelung_rhs(H, rank):
    state = _smooth_state(_periodic(rank, 24))
    plus = branch_rhs(H, BranchState(1.0, state.S, state.rho))
    minus = branch_rhs(H, BranchState(-1.0, state.S, state.rho))
    drho, dS = madelung_rhs(H, state)
    assert np.max(np.abs(0.5 * (plus[0] + minus[0]) - drho)) < 1e-12
    assert np.max(np.abs(0.5 * (plus[1] + minus[1]) - dS)) < 1e-12
    assert np.max(np.abs(plus[0] - minus[0])) > 1e-3


def test_position_coupling_has_no_lambda_correction():
    state = _smooth_state(_periodic(2, 24))
    H = MeasurePosition(1.5)
    plus = branch_rhs(H, BranchState(1.0, state.S, state.rho))
    minus = branch_rhs(H, BranchState(-1.0, state.S, state.rho))
    assert np.array_equal(plus[0], minus[0])
    assert np.array_equal(plus[1], minus[1])
    assert np.allclose(plus[1], madelung_rhs(H, state, include_quantum=False)[1], atol=1e-14)


def test_cubic_momentum_has_no_branch_pair():
    state = _smooth_state(_periodic(2, 16))
    with pytest.raises(UnsupportedHamiltonianError):
        branch_rhs(MomentumPower(Profile.polynomial([1.0]), 3), BranchState(1.0, state.S, state.rho))


# ============================================================================
# Fast flips
# ============================================================================


def test_flip_ensemble_is_reproducible(oscillator_state):
    H = EmParticle.harmonic()
    a = flip_ensemble(H, oscillator_state, 4e-3, 4, replicas=3, seed=9)
    b = flip_ensemble(H, oscillator_state, 4e-3, 4, replicas=3, seed=9)
    for x, y in zip(a, b, strict=True):
        assert np.array_equal(x.rho.values, y.rho.values)
        assert np.array_equal(x.S.values, y.S.values)
    assert a[0].t == pytest.approx(4e-3)


def test_flip_needs_a_micro_step(oscillator_state):
    with pytest.raises(UsageError):
        flip_evolve(EmParticle.harmonic(), oscillator_state, 4e-3, 0)


def test_antithetic_pair_error_is_second_order(oscillator_state):
    """A lambda, -lambda pair deviates from Madelung by O(dt**2)."""
    H = EmParticle.harmonic()

    def pair_error(dt: float) -> float:
        paired = antithetic_pair(H, oscillator_state, dt, 1.0)
        reference = oscillator_state
        for _ in range(16):
            reference = evolve_madelung(H, reference, 2.0 * dt / 16)
        return float(np.max(np.abs(paired.rho.values - reference.rho.values)))

    coarse, fine = pair_error(2e-3), pair_error(1e-3)
    assert coarse > 0.0
    assert coarse / fine > 3.0
