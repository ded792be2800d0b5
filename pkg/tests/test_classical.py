"""Tests for the Hamilton-Jacobi ensemble engine and trajectory integration."""

import numpy as np
import pytest

from hvquant.classical import (
    ClassicalEnsembleState,
    characteristic_transport,
    classical_pointer_readout,
    continuity_step,
    evolve,
    hj_step,
    integrate_between,
    integrate_trajectories,
    momentum_characteristics,
    point_velocity,
)
from hvquant.exceptions import CausticError, StabilityError, UsageError
from hvquant.fields import Axis, Grid, RealField, integrate
from hvquant.quantizer import (
    EmParticle,
    LinearDrift,
    MeasureMomentum,
    MeasurePosition,
    Profile,
)


def _free_state(grid: Grid, p0: float) -> ClassicalEnsembleState:
    q = grid.coordinates(0)
    rho = np.exp(-(q**2) / 2.0) / np.sqrt(2.0 * np.pi)
    return ClassicalEnsembleState(RealField(grid, p0 * q), RealField(grid, rho), 0.0)


def test_free_action_and_density_transport(dirichlet_grid):
    """Constant momentum: S loses p0**2/2 per unit time and the density translates."""
    p0, dt, steps = 1.5, 5e-3, 100
    start = _free_state(dirichlet_grid, p0)
    history = evolve(EmParticle(), start, dt, steps, output_every=25)
    final = history[-1]
    t = dt * steps
    assert len(history) == 5
    assert final.t == pytest.approx(t)
    assert np.allclose(final.S.values - start.S.values, -0.5 * p0**2 * t, atol=1e-10)
    q = dirichlet_grid.coordinates(0)
    mean = integrate(final.rho.with_values(q * final.rho.values))
    assert mean == pytest.approx(p0 * t, abs=1e-6)
    assert integrate(final.rho) == pytest.approx(1.0, abs=1e-8)


def test_cfl_violation_raises(dirichlet_grid):
    start = _free_state(dirichlet_grid, 10.0)
    with pytest.raises(StabilityError) as info:
        hj_step(EmParticle(), start, 0.5)
    assert info.value.criterion == "advective"


def test_position_coupling_point_velocity():
    velocity = point_velocity(MeasurePosition(2.0), 2)
    points = np.array([[0.5, 3.0], [-1.0, 0.0]])
    assert np.allclose(velocity(points, 0.0), [[0.0, 1.0], [0.0, -2.0]])


def test_point_velocity_requires_phase_free_hamiltonian():
    with pytest.raises(UsageError):
        point_velocity(EmParticle(), 1)


def test_trajectories_constant_velocity_and_domain_exit():
    """Uniform drift is integrated exactly; particles leaving the box are frozen and flagged."""
    grid = Grid.from_bounds([(32, -1.0, 1.0, "dirichlet")])
    seeds = np.array([[0.0], [0.9]])
    traj = integrate_trajectories(
        lambda x, t: np.ones_like(x) * 0.5, seeds, (0.0, 1.0), 20, grid, output_every=5
    )
    assert traj.times.shape == (5,)
    assert traj.final[0, 0] == pytest.approx(0.5)
    assert traj.flagged.tolist() == [False, True]
    assert traj.final[1, 0] <= 1.0
    assert traj.flagged_fraction == 0.5


def test_trajectories_need_particles_and_steps():
    with pytest.raises(UsageError):
        integrate_trajectories(lambda x, t: x, np.empty((0, 1)), (0.0, 1.0), 4)
    with pytest.raises(UsageError):
        integrate_trajectories(lambda x, t: x, np.zeros((2, 1)), (0.0, 1.0), 0)


def test_integrate_between_stores_each_uneven_output_time():
    times = np.array([0.0, 0.1, 0.5, 0.6, 1.5])
    traj = integrate_between(lambda x, t: np.full_like(x, t), np.zeros((3, 1)), times, 3)
    assert np.allclose(traj.times, times)
    assert np.allclose(traj.positions[:, :, 0], 0.5 * times[:, None] ** 2, atol=1e-14)


def test_integrate_between_needs_increasing_times():
    with pytest.raises(UsageError):
        integrate_between(lambda x, t: x, np.zeros((1, 1)), np.array([0.0, 0.5, 0.5]), 2)
    with pytest.raises(UsageError):
        integrate_between(lambda x, t: x, np.zeros((1, 1)), np.array([0.0, 1.0]), 0)


def test_trajectories_store_the_final_partial_interval():
    traj = integrate_trajectories(
        lambda x, t: np.ones_like(x), np.zeros((1, 1)), (0.0, 1.0), 10, output_every=4
    )
    assert np.allclose(traj.times, [0.0, 0.4, 0.8, 1.0])
    assert traj.final[0, 0] == pytest.approx(1.0)


def test_pointer_readout_recovers_system_coordinate():
    """Under g q1 p2 the pointer displacement divided by gT is q1 itself."""
    g, T = 3.0, 0.7
    rng = np.random.default_rng(0)
    seeds = rng.normal(size=(200, 2))
    traj = integrate_trajectories(point_velocity(MeasurePosition(g), 2), seeds, (0.0, T), 16)
    readout = classical_pointer_readout(traj, g, T)
    assert np.max(np.abs(readout - seeds[:, 0])) < 1e-12


def test_pointer_readout_rejects_zero_span():
    traj = integrate_trajectories(lambda x, t: 0 * x, np.zeros((1, 2)), (0.0, 1.0), 1)
    with pytest.raises(UsageError):
        classical_pointer_readout(traj, 1.0, 0.0)


def test_characteristic_transport_for_uniform_drift():
    """B = 1 drift moves rho and S rigidly by t."""
    grid = Grid.from_bounds([(128, -6.0, 6.0, "dirichlet")])
    t = 0.8

    def rho0(coords):
        return np.exp(-(coords[0] ** 2))

    def S0(coords):
        return np.sin(coords[0])

    state = characteristic_transport(LinearDrift(Profile.polynomial([1.0])), rho0, S0, grid, t)
    q = grid.coordinates(0)
    assert np.allclose(state.rho.values, np.exp(-((q - t) ** 2)), atol=1e-10)
    assert np.allclose(state.S.values, np.sin(q - t), atol=1e-10)


def test_characteristic_transport_compresses_density():
    """B(q) = q stretches space by e^t, so rho0 picks up the Jacobian e^-t."""
    grid = Grid.from_bounds([(64, -2.0, 2.0, "dirichlet")])
    t = 0.5
    drift = LinearDrift(Profile.polynomial([0.0, 1.0]))
    state = characteristic_transport(drift, lambda c: np.ones_like(c[0]), lambda c: 0 * c[0], grid, t)
    assert np.allclose(state.rho.values, np.exp(-t), rtol=1e-8)


def test_continuity_step_conserves_mass_on_periodic_grid(periodic_grid):
    x = periodic_grid.coordinates(0)
    rho = RealField(periodic_grid, (1.0 + 0.5 * np.sin(x)) / (2.0 * np.pi))
    velocity = [np.cos(x)]
    stepped = continuity_step(velocity, rho, 0.01)
    assert integrate(stepped) == pytest.approx(integrate(rho), abs=1e-12)
    assert not np.allclose(stepped.values, rho.values)
    with pytest.raises(StabilityError):
        continuity_step(velocity, rho, 1.0)


def test_continuity_step_on_dirichlet_grid_loses_the_boundary_outflow():
    """Uniform rho in v = q: the only change in mass is the flux through both walls."""
    grid = Grid((Axis(41, -2.0, 2.0, "dirichlet"),))
    q = grid.coordinates(0)
    dt = 0.01
    stepped = continuity_step([q], RealField(grid, np.ones_like(q)), dt)
    decay = 1.0 - dt + dt**2 / 2.0 - dt**3 / 6.0 + dt**4 / 24.0
    assert np.allclose(stepped.values, decay, atol=1e-12)
    assert integrate(stepped) == pytest.approx(4.0 * decay, abs=1e-12)


def test_momentum_characteristics_shift_pointer_by_g_p1_t():
    grid = Grid((Axis(32, -8.0, 8.0, "periodic"), Axis(64, -8.0, 8.0, "periodic")))

    def rho0(coords):
        return np.exp(-(coords[0] ** 2 + coords[1] ** 2) / 2.0) / (2.0 * np.pi)

    def grad0(coords):
        return [np.full_like(coords[0], 0.5), np.zeros_like(coords[1])]

    rho, grad = momentum_characteristics(MeasureMomentum(2.0), rho0, grad0, grid, 0.5)
    q1, q2 = grid.mesh()
    assert np.allclose(rho.values, rho0((q1, q2 - 0.5)), atol=1e-12)
    assert np.allclose(grad[0].values, 0.5)
    assert np.allclose(grad[1].values, 0.0)


def test_momentum_characteristics_divergent_flow_dilutes_density(dirichlet_grid):
    """Free particle with p0 = q/2: X = X0 (1 + t/2), rho scales by 1/(1 + t/2)."""
    q = dirichlet_grid.coordinates(0)

    def rho0(coords):
        return np.exp(-(coords[0] ** 2) / 2.0) / np.sqrt(2.0 * np.pi)

    rho, grad = momentum_characteristics(
        EmParticle(), rho0, lambda coords: [0.5 * coords[0]], dirichlet_grid, 1.0
    )
    stretch = 1.5
    assert np.allclose(rho.values, rho0((q / stretch,)) / stretch, atol=1e-8)
    assert np.allclose(grad[0].values, 0.5 * q / stretch, atol=1e-10)


def test_momentum_characteristics_detect_focusing_caustic(dirichlet_grid):
    with pytest.raises(CausticError):
        momentum_characteristics(
            EmParticle(),
            lambda coords: np.ones_like(coords[0]),
            lambda coords: [-coords[0]],
            dirichlet_grid,
            1.5,
        )


def test_momentum_characteristics_need_conserved_momentum(dirichlet_grid):
    with pytest.raises(UsageError):
        momentum_characteristics(
            EmParticle.harmonic(),
            lambda coords: np.ones_like(coords[0]),
            lambda coords: [np.zeros_like(coords[0])],
            dirichlet_grid,
            0.1,
        )
