"""Classical ensemble dynamics.

Hamilton-Jacobi evolution of the action S, conservative continuity transport
of the density rho, and RK4 trajectory integration. These are the classical
baselines the quantum and hidden-variable engines are compared against.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .config import ADVECTIVE_CFL
from .exceptions import CausticError, StabilityError, UsageError
from .fields import Grid, RealField, derivative
from .quantizer import (
    ClassicalHamiltonian,
    EmParticle,
    LinearDrift,
    MeasureMomentum,
    MomentumPower,
    PdmQuadratic,
    Sum,
    classical_value,
    velocity_functional,
)

logger = logging.getLogger(__name__)

# (points (n, rank), t) -> velocities (n, rank)
PointVelocity = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class ClassicalEnsembleState:
    """Action and density of a classical ensemble at time t.

    Attributes:
        S: Hamilton principle function (action units)
        rho: Probability density
        t: Time
    """

    S: RealField
    rho: RealField
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Particle paths sampled at common output times.

    Attributes:
        times: Output times, shape (m,)
        positions: Coordinates, shape (m, n, rank)
        flagged: Particles that left a dirichlet domain or met an undefined velocity
    """

    times: np.ndarray
    positions: np.ndarray
    flagged: np.ndarray

    @property
    def count(self) -> int:
        return int(self.positions.shape[1])

    @property
    def initial(self) -> np.ndarray:
        return self.positions[0]

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flagged))


# ============================================================================
# Continuity and Hamilton-Jacobi
# ============================================================================


def advective_limit(velocity: Sequence[np.ndarray], grid: Grid) -> float:
    """Largest dt with dt <= ADVECTIVE_CFL * h_k / max|v_k| on every axis."""
    limit = np.inf
    for vk, h in zip(velocity, grid.spacings, strict=True):
        vmax = float(np.max(np.abs(vk))) if np.size(vk) else 0.0
        if vmax > 0.0:
            limit = min(limit, ADVECTIVE_CFL * h / vmax)
    return limit


def continuity_rhs(velocity: Sequence[np.ndarray], rho: np.ndarray, grid: Grid) -> np.ndarray:
    """-div(rho v) as central differences of the flux rho v.

    This is not a finite-volume update. On periodic axes the central stencil
    telescopes and the discrete integral of the right-hand side vanishes to
    round-off; on dirichlet axes the one-sided edge stencils do not telescope,
    so mass is conserved only up to the flux through the boundary rows.
    """
    out = np.zeros_like(rho)
    for k, vk in enumerate(velocity):
        out = out - derivative(rho * vk, grid, k, 1)
    return out


def continuity_step(
    velocity: Sequence[RealField | np.ndarray], rho: RealField, dt: float
) -> RealField:
    """Advance rho by one RK4 step of d(rho)/dt = -div(rho v) with frozen v.

    Mass is conserved exactly (to round-off) only on all-periodic grids.

    Raises:
        StabilityError: If dt exceeds the advective CFL bound.
    """
    grid = rho.grid
    v = [np.asarray(getattr(vk, "values", vk)) for vk in velocity]
    limit = advective_limit(v, grid)
    if dt > limit:
        raise StabilityError(dt, limit, "advective")
    r = rho.values
    k1 = continuity_rhs(v, r, grid)
    k2 = continuity_rhs(v, r + 0.5 * dt * k1, grid)
    k3 = continuity_rhs(v, r + 0.5 * dt * k2, grid)
    k4 = continuity_rhs(v, r + dt * k3, grid)
    return rho.with_values(r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def _hj_rhs(
    H: ClassicalHamiltonian, S: np.ndarray, rho: np.ndarray, grid: Grid, t: float
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    coords = grid.mesh()
    grad = [derivative(S, grid, k, 1) for k in range(grid.rank)]
    v = velocity_functional(H).from_gradient(grad, coords, t)
    dS = -classical_value(H, grad, coords, t)
    return dS, continuity_rhs(v, rho, grid), v


def hj_step(
    H: ClassicalHamiltonian, state: ClassicalEnsembleState, dt: float
) -> ClassicalEnsembleState:
    """One RK4 step of dS/dt = -H(q, dS/dq; t) coupled to continuity with v = f(S).

    Raises:
        StabilityError: If dt exceeds the advective CFL bound.
        CausticError: If S or rho stop being finite.
    """
    grid, t = state.S.grid, state.t
    S, rho = state.S.values, state.rho.values

    s1, r1, v = _hj_rhs(H, S, rho, grid, t)
    limit = advective_limit(v, grid)
    if dt > limit:
        raise StabilityError(dt, limit, "advective")
    s2, r2, _ = _hj_rhs(H, S + 0.5 * dt * s1, rho + 0.5 * dt * r1, grid, t + 0.5 * dt)
    s3, r3, _ = _hj_rhs(H, S + 0.5 * dt * s2, rho + 0.5 * dt * r2, grid, t + 0.5 * dt)
    s4, r4, _ = _hj_rhs(H, S + dt * s3, rho + dt * r3, grid, t + dt)

    with np.errstate(all="ignore"):
        S_new = S + dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        rho_new = rho + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    if not (np.all(np.isfinite(S_new)) and np.all(np.isfinite(rho_new))):
        raise CausticError(t + dt)
    return ClassicalEnsembleState(
        state.S.with_values(S_new), state.rho.with_values(rho_new), t + dt
    )


def evolve(
    H: ClassicalHamiltonian,
    state: ClassicalEnsembleState,
    dt: float,
    n_steps: int,
    output_every: int = 1,
) -> list[ClassicalEnsembleState]:
    """Repeated hj_step; returns the start state and every output_every-th state."""
    history = [state]
    for step in range(1, n_steps + 1):
        state = hj_step(H, state, dt)
        if step % output_every == 0 or step == n_steps:
            history.append(state)
    logger.debug(f"Classical evolution: {n_steps} steps to t={state.t:.6g}")
    return history


# ============================================================================
# Characteristics
# ============================================================================


def point_velocity(H: ClassicalHamiltonian, rank: int) -> PointVelocity:
    """Pointwise velocity of a Hamiltonian whose velocity ignores S.

    Raises:
        UsageError: If the velocity functional depends on S.
    """
    vf = velocity_functional(H)
    if vf.uses_phase:
        raise UsageError(
            "H", type(H).__name__, reason="velocity depends on S; sample it on a grid"
        )

    def velocity(points: np.ndarray, t: float) -> np.ndarray:
        coords = tuple(points[:, k] for k in range(rank))
        zeros = [np.zeros(points.shape[0]) for _ in range(rank)]
        return np.stack(vf.from_gradient(zeros, coords, t), axis=-1)

    return velocity


def _divergence(velocity: PointVelocity, points: np.ndarray, t: float, eps: float) -> np.ndarray:
    total = np.zeros(points.shape[0])
    for k in range(points.shape[1]):
        step = np.zeros(points.shape[1])
        step[k] = eps
        total += (velocity(points + step, t)[:, k] - velocity(points - step, t)[:, k]) / (
            2.0 * eps
        )
    return total


def characteristic_transport(
    H: ClassicalHamiltonian,
    rho0: Callable[[tuple[np.ndarray, ...]], np.ndarray],
    S0: Callable[[tuple[np.ndarray, ...]], np.ndarray],
    grid: Grid,
    t: float,
    n_steps: int = 64,
) -> ClassicalEnsembleState:
    """Exact-transport solution for Hamiltonians linear in momentum.

    Every grid node is traced back along its characteristic to the foot
    point X0 at time 0. S is constant along characteristics and
    rho(q, t) = rho0(X0) exp(-int div v ds).

    Args:
        H: Hamiltonian whose velocity does not depend on S
        rho0: Initial density as a function of mesh coordinates
        S0: Initial action as a function of mesh coordinates
        grid: Output grid
        t: Final time
        n_steps: RK4 steps along each characteristic

    Raises:
        UsageError: If the velocity depends on S.
    """
    velocity = point_velocity(H, grid.rank)
    points = np.stack([c.ravel() for c in grid.mesh()], axis=-1)
    log_jacobian = np.zeros(points.shape[0])
    eps = 1e-4 * min(grid.spacings)
    ds = t / n_steps
    s = t

    # backward in time: dX/ds = v(X, s) integrated from s to s - ds
    def rhs(x: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
        return -velocity(x, tau), _divergence(velocity, x, tau, eps)

    for _ in range(n_steps):
        a1, d1 = rhs(points, s)
        a2, d2 = rhs(points + 0.5 * ds * a1, s - 0.5 * ds)
        a3, d3 = rhs(points + 0.5 * ds * a2, s - 0.5 * ds)
        a4, d4 = rhs(points + ds * a3, s - ds)
        points = points + ds / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        log_jacobian -= ds / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        s -= ds

    feet = tuple(points[:, k].reshape(grid.shape) for k in range(grid.rank))
    rho = np.asarray(rho0(feet)) * np.exp(log_jacobian).reshape(grid.shape)
    S = np.asarray(S0(feet), dtype=float)
    return ClassicalEnsembleState(RealField(grid, S), RealField(grid, rho), t)


def _momentum_only(H: ClassicalHamiltonian) -> bool:
    if isinstance(H, MeasureMomentum):
        return True
    if isinstance(H, EmParticle):
        return H.scalar_potential is None and H.vector_potential is None
    if isinstance(H, (PdmQuadratic, LinearDrift, MomentumPower)):
        return H.b.constant is not None
    if isinstance(H, Sum):
        return all(_momentum_only(h) for _, h in H.terms)
    return False


def momentum_characteristics(
    H: ClassicalHamiltonian,
    rho0: Callable[[tuple[np.ndarray, ...]], np.ndarray],
    grad_S0: Callable[[tuple[np.ndarray, ...]], Sequence[np.ndarray]],
    grid: Grid,
    t: float,
    max_iterations: int = 100,
    tol: float = 1e-12,
) -> tuple[RealField, list[RealField]]:
    """Classical rho and dS/dq at time t for Hamiltonians without q dependence.

    Momentum is constant along characteristics, X(t) = X0 + t f(p0(X0)) with
    p0 = dS0/dq. Each node is traced back by the fixed-point iteration
    X0 <- q - t f(p0(X0)), and rho(q, t) = rho0(X0) / det(dX/dX0).

    Raises:
        UsageError: If H depends on position.
        CausticError: If the foot points do not converge or the map folds.
    """
    if not _momentum_only(H):
        raise UsageError("H", type(H).__name__, reason="momentum must be conserved")
    vf = velocity_functional(H)
    rank = grid.rank
    target = np.stack([c.ravel() for c in grid.mesh()], axis=-1)

    def flow(points: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        coords = tuple(points[:, k] for k in range(rank))
        p = [np.asarray(pk, dtype=float) for pk in grad_S0(coords)]
        return np.stack(vf.from_gradient(p, coords, 0.0), axis=-1), p

    feet = target.copy()
    for _ in range(max_iterations):
        v, _ = flow(feet)
        update = target - t * v
        shift = float(np.max(np.abs(update - feet)))
        feet = update
        if shift <= tol * max(1.0, float(np.max(np.abs(target)))):
            break
    else:
        raise CausticError(t)

    eps = 1e-4 * min(grid.spacings)
    jacobian = np.repeat(np.eye(rank)[None, :, :], feet.shape[0], axis=0)
    for j in range(rank):
        step = np.zeros(rank)
        step[j] = eps
        jacobian[:, :, j] += t * (flow(feet + step)[0] - flow(feet - step)[0]) / (2.0 * eps)
    det = np.linalg.det(jacobian)
    if not np.all(np.isfinite(det)) or np.any(det <= 0.0):
        raise CausticError(t)

    coords = tuple(feet[:, k].reshape(grid.shape) for k in range(rank))
    rho = np.asarray(rho0(coords)) / det.reshape(grid.shape)
    _, p = flow(feet)
    return RealField(grid, rho), [RealField(grid, pk.reshape(grid.shape)) for pk in p]


# ============================================================================
# Trajectories
# ============================================================================


def _outside(points: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros(points.shape[0], dtype=bool)
    for k, ax in enumerate(grid.axes):
        if not ax.periodic:
            out |= (points[:, k] < ax.lower) | (points[:, k] > ax.upper)
    return out


def _rk4_paths(
    velocity: PointVelocity,
    seeds: np.ndarray,
    step_times: np.ndarray,
    keep: np.ndarray,
    grid: Grid | None,
) -> TrajectorySet:
    """RK4 across the given step times, storing positions where keep is set."""
    x = np.array(seeds, dtype=float, ndmin=2)
    if x.shape[0] < 1:
        raise UsageError("seeds", x.shape, reason="need at least one particle")
    flagged = np.zeros(x.shape[0], dtype=bool)
    frozen = np.zeros(x.shape[0], dtype=bool)
    last_v = np.zeros_like(x)

    def guarded(points: np.ndarray, t: float) -> np.ndarray:
        v = np.asarray(velocity(points, t), dtype=float)
        bad = ~np.all(np.isfinite(v), axis=1)
        if np.any(bad):
            flagged[bad] = True
            v[bad] = last_v[bad]
        return v

    times = [float(step_times[0])]
    outputs = [x.copy()]
    for step in range(1, step_times.size):
        t = float(step_times[step - 1])
        dt = float(step_times[step]) - t
        k1 = guarded(x, t)
        last_v[:] = k1
        k2 = guarded(x + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = guarded(x + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = guarded(x + dt * k3, t + dt)
        x_new = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if grid is not None:
            frozen |= _outside(x_new, grid)
        x = np.where(frozen[:, None], x, x_new)
        if keep[step]:
            times.append(float(step_times[step]))
            outputs.append(x.copy())
    flagged |= frozen
    if np.any(flagged):
        logger.warning(f"{int(flagged.sum())} of {x.shape[0]} trajectories flagged")
    return TrajectorySet(np.asarray(times), np.stack(outputs), flagged)


def integrate_trajectories(
    velocity: PointVelocity,
    seeds: np.ndarray,
    t_span: tuple[float, float],
    n_steps: int,
    grid: Grid | None = None,
    output_every: int = 1,
) -> TrajectorySet:
    """RK4 integration of dq/dt = v(q, t) for a batch of particles.

    Rows whose velocity is undefined keep their last finite velocity and are
    flagged. With a grid, particles leaving a dirichlet axis are frozen at
    their last inside position and flagged.

    Args:
        velocity: Vectorized velocity callable
        seeds: Initial coordinates, shape (n, rank)
        t_span: (t0, t1)
        n_steps: RK4 steps
        grid: Optional grid for domain checks
        output_every: Steps between stored outputs; the final step is always stored

    Raises:
        UsageError: If there are no seeds or no steps.
    """
    if n_steps < 1:
        raise UsageError("n_steps", n_steps, reason="must be positive")
    t0, t1 = t_span
    steps = np.arange(n_steps + 1)
    step_times = t0 + steps * ((t1 - t0) / n_steps)
    keep = (steps % output_every == 0) | (steps == n_steps)
    return _rk4_paths(velocity, seeds, step_times, keep, grid)


def integrate_between(
    velocity: PointVelocity,
    seeds: np.ndarray,
    output_times: np.ndarray,
    substeps: int,
    grid: Grid | None = None,
) -> TrajectorySet:
    """RK4 with ``substeps`` equal steps inside each interval of output_times.

    The output times need not be evenly spaced; positions are stored at
    each of them.

    Raises:
        UsageError: If the times are not increasing or substeps < 1.
    """
    out = np.asarray(output_times, dtype=float)
    if out.size < 2 or np.any(np.diff(out) <= 0):
        raise UsageError("output_times", out.size, reason="need at least two increasing times")
    if substeps < 1:
        raise UsageError("substeps", substeps, reason="must be positive")
    fractions = np.arange(substeps) / substeps
    step_times = np.append((out[:-1, None] + np.diff(out)[:, None] * fractions).ravel(), out[-1])
    keep = np.arange(step_times.size) % substeps == 0
    return _rk4_paths(velocity, seeds, step_times, keep, grid)


def classical_pointer_readout(
    traj: TrajectorySet, g: float, T: float, pointer_axis: int = 1
) -> np.ndarray:
    """Readout (q2(T) - q2(0)) / (gT) per trajectory.

    Raises:
        UsageError: If g * T vanishes.
    """
    if T == 0:
        raise UsageError("T", T, reason="interaction span must be non-zero")
    if g == 0:
        raise UsageError("g", g, reason="coupling must be non-zero")
    return (traj.final[:, pointer_axis] - traj.initial[:, pointer_axis]) / (g * T)
