"""Hidden-variable layer.

lambda is an action-valued random variable, +hbar or -hbar with equal
probability. At fixed lambda the ensemble obeys a coupled pair:

    d(rho)/dt = -div(rho f(S)) - lambda * (diffusion term)
    dS/dt     = -H(q, dS/dq) + lambda**2 * (quantum term)

Averaging the two branches over lambda removes the odd diffusion term and
reproduces the Madelung pair. This module samples lambda, steps branches,
runs fast-flip stochastic evolutions and checks the averaging identities.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .classical import advective_limit, continuity_rhs
from .config import DEFAULT_HBAR, DIFFUSIVE_CFL
from .exceptions import PositivityError, StabilityError, UnsupportedHamiltonianError, UsageError
from .fields import Grid, RealField, derivative, integrate
from .models import EvolutionMode, LambdaKind
from .quantizer import (
    ClassicalHamiltonian,
    EmParticle,
    LinearDrift,
    MeasureAngularZ,
    MeasureLinearObservable,
    MeasureMomentum,
    MeasurePosition,
    MomentumPower,
    PdmQuadratic,
    Sum,
    classical_value,
    velocity_functional,
)
from .quantum import MadelungState, check_nodes, quantum_term

logger = logging.getLogger(__name__)

Seed = int | np.random.SeedSequence | np.random.Generator | None

# ============================================================================
# Lambda distributions
# ============================================================================


@dataclass(frozen=True)
class LambdaDistribution:
    """Law of the hidden variable.

    Attributes:
        kind: two-point, ball-surface or generalized-two-point
        hbar: Reduced Planck constant
        value: Magnitude a for generalized-two-point (defaults to hbar)
        weight: Probability of +a for generalized-two-point
    """

    kind: LambdaKind = LambdaKind.TWO_POINT
    hbar: float = DEFAULT_HBAR
    value: float | None = None
    weight: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LambdaKind(self.kind))
        if not 0.0 < self.weight < 1.0:
            raise UsageError("weight", self.weight, reason="must lie in (0, 1)")
        if self.value is not None and self.value <= 0:
            raise UsageError("value", self.value, reason="magnitude must be positive")

    @property
    def magnitude(self) -> float:
        if self.kind is LambdaKind.GENERALIZED_TWO_POINT and self.value is not None:
            return self.value
        return self.hbar

    @property
    def mean(self) -> float:
        if self.kind is LambdaKind.GENERALIZED_TWO_POINT:
            return self.magnitude * (2.0 * self.weight - 1.0)
        return 0.0


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ball_surface_points(n: int, hbar: float = DEFAULT_HBAR, seed: Seed = None) -> np.ndarray:
    """Uniform points on the sphere of radius hbar (normalized Gaussians)."""
    nu = _rng(seed).standard_normal((n, 3))
    return hbar * nu / np.linalg.norm(nu, axis=1, keepdims=True)


def sample_lambdas(dist: LambdaDistribution, n: int, seed: Seed = None) -> np.ndarray:
    """n independent draws of lambda, deterministic per seed.

    Ball-surface draws take the sign of the third component of a uniform
    point on the sphere of radius hbar, so |lambda| == hbar exactly.
    """
    if n < 1:
        raise UsageError("n", n, reason="need at least one draw")
    rng = _rng(seed)
    if dist.kind is LambdaKind.TWO_POINT:
        return np.where(rng.random(n) < 0.5, dist.hbar, -dist.hbar)
    if dist.kind is LambdaKind.BALL_SURFACE:
        nu = ball_surface_points(n, dist.hbar, rng)
        return np.where(nu[:, 2] >= 0.0, dist.hbar, -dist.hbar)
    a = dist.magnitude
    return np.where(rng.random(n) < dist.weight, a, -a)


def sample_lambda(dist: LambdaDistribution, seed: Seed = None) -> float:
    """A single draw of lambda."""
    return float(sample_lambdas(dist, 1, seed)[0])


# ============================================================================
# Branch dynamics
# ============================================================================


@dataclass(frozen=True)
class BranchState:
    """The (rho, S) pair evolved at a fixed lambda.

    Attributes:
        lam: Signed action value of lambda
        S: Action field
        rho: Density
        t: Time
    """

    lam: float
    S: RealField
    rho: RealField
    t: float = 0.0


def _mixed(rho: np.ndarray, grid: Grid, a: int, b: int) -> np.ndarray:
    return derivative(derivative(rho, grid, a, 1), grid, b, 1)


def _diffusion(H: ClassicalHamiltonian, rho: np.ndarray, grid: Grid) -> np.ndarray:
    """The lambda-odd continuity term per unit lambda (sign included)."""
    if isinstance(H, EmParticle):
        total = np.zeros_like(rho)
        for k in range(grid.rank):
            total = total + derivative(rho, grid, k, 2)
        return -total / (2.0 * H.mass)
    if isinstance(H, MomentumPower) and H.power in (1, 2):
        member = LinearDrift(H.b, H.axis) if H.power == 1 else PdmQuadratic(H.b, H.axis)
        return _diffusion(member, rho, grid)
    if isinstance(H, PdmQuadratic):
        q = grid.mesh()[H.axis]
        return -derivative(H.b(q) * derivative(rho, grid, H.axis, 1), grid, H.axis, 1)
    if isinstance(H, (LinearDrift, MeasurePosition)):
        return np.zeros_like(rho)
    if isinstance(H, MeasureMomentum):
        return -H.g * _mixed(rho, grid, H.system_axis, H.pointer_axis)
    if isinstance(H, MeasureAngularZ):
        coords = grid.mesh()
        x, y = coords[H.x_axis], coords[H.y_axis]
        lz = x * _mixed(rho, grid, H.y_axis, H.pointer_axis) - y * (
            _mixed(rho, grid, H.x_axis, H.pointer_axis)
        )
        return -H.g * lz
    if isinstance(H, MeasureLinearObservable):
        q = grid.mesh()[H.system_axis]
        d_pointer = derivative(rho, grid, H.pointer_axis, 1)
        mixed = _mixed(rho, grid, H.system_axis, H.pointer_axis)
        return -H.g * (H.b(q) * mixed + 0.5 * H.b.derivative(q) * d_pointer)
    if isinstance(H, Sum):
        total = np.zeros_like(rho)
        for c, member in H.terms:
            total = total + c * _diffusion(member, rho, grid)
        return total
    raise UnsupportedHamiltonianError(
        type(H).__name__, "no lambda-parameterized pair for this Hamiltonian"
    )


def _diffusivity(H: ClassicalHamiltonian, grid: Grid) -> float:
    """Largest coefficient multiplying lambda times a second derivative of rho."""
    if isinstance(H, EmParticle):
        return 1.0 / (2.0 * H.mass)
    if isinstance(H, MomentumPower) and H.power == 2:
        return _diffusivity(PdmQuadratic(H.b, H.axis), grid)
    if isinstance(H, PdmQuadratic):
        return float(np.max(np.abs(H.b(grid.coordinates(H.axis)))))
    if isinstance(H, MeasureMomentum):
        return abs(H.g)
    if isinstance(H, MeasureAngularZ):
        reach = max(
            np.max(np.abs(grid.coordinates(H.x_axis))), np.max(np.abs(grid.coordinates(H.y_axis)))
        )
        return abs(H.g) * float(reach)
    if isinstance(H, MeasureLinearObservable):
        return abs(H.g) * float(np.max(np.abs(H.b(grid.coordinates(H.system_axis)))))
    if isinstance(H, Sum):
        return sum(abs(c) * _diffusivity(h, grid) for c, h in H.terms)
    return 0.0


def diffusive_limit(H: ClassicalHamiltonian, lam: float, grid: Grid) -> float:
    """Largest dt with dt <= DIFFUSIVE_CFL * h**2 / (2 |lambda| D)."""
    d = abs(lam) * _diffusivity(H, grid)
    if d == 0.0:
        return np.inf
    return DIFFUSIVE_CFL * min(grid.spacings) ** 2 / (2.0 * d)


def _branch_rhs(
    H: ClassicalHamiltonian,
    lam: float,
    rho: np.ndarray,
    S: np.ndarray,
    grid: Grid,
    t: float,
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    coords = grid.mesh()
    grad = [derivative(S, grid, k, 1) for k in range(grid.rank)]
    v = velocity_functional(H).from_gradient(grad, coords, t)
    drho = continuity_rhs(v, rho, grid)
    dS = -classical_value(H, grad, coords, t)
    if lam != 0.0:
        check_nodes(rho)
        drho = drho + lam * _diffusion(H, rho, grid)
        dS = dS + quantum_term(H, rho, grid, t, lam**2)
    return drho, dS, v


def branch_rhs(H: ClassicalHamiltonian, b: BranchState) -> tuple[np.ndarray, np.ndarray]:
    """(d rho/dt, dS/dt) of the lambda-parameterized pair.

    Raises:
        NodeError: If rho has a node and lambda is non-zero.
        UnsupportedHamiltonianError: For B(q) p**n with n >= 3.
    """
    drho, dS, _ = _branch_rhs(H, b.lam, b.rho.values, b.S.values, b.rho.grid, b.t)
    return drho, dS


def _check_step(H: ClassicalHamiltonian, lam: float, v: list[np.ndarray], grid: Grid, dt: float) -> None:
    limit = advective_limit(v, grid)
    if dt > limit:
        raise StabilityError(dt, limit, "advective")
    limit = diffusive_limit(H, lam, grid)
    if dt > limit:
        raise StabilityError(dt, limit, "diffusive")


def _rk4(
    H: ClassicalHamiltonian, lam: float, rho: np.ndarray, S: np.ndarray, grid: Grid, t: float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    r1, s1, v = _branch_rhs(H, lam, rho, S, grid, t)
    _check_step(H, lam, v, grid, dt)
    r2, s2, _ = _branch_rhs(H, lam, rho + 0.5 * dt * r1, S + 0.5 * dt * s1, grid, t + 0.5 * dt)
    r3, s3, _ = _branch_rhs(H, lam, rho + 0.5 * dt * r2, S + 0.5 * dt * s2, grid, t + 0.5 * dt)
    r4, s4, _ = _branch_rhs(H, lam, rho + dt * r3, S + dt * s3, grid, t + dt)
    return (
        rho + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4),
        S + dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4),
    )


def branch_step(H: ClassicalHamiltonian, b: BranchState, dt: float) -> BranchState:
    """One RK4 step of a single branch.

    Raises:
        StabilityError: If dt exceeds the advective or diffusive CFL bound.
        PositivityError: If the step produces negative density.
        NodeError: If rho has a node.
    """
    rho, S = _rk4(H, b.lam, b.rho.values, b.S.values, b.rho.grid, b.t, dt)
    if rho.min() < 0.0:
        raise PositivityError(b.t + dt, float(rho.min()))
    return BranchState(b.lam, b.S.with_values(S), b.rho.with_values(rho), b.t + dt)


@dataclass(frozen=True)
class BranchRun:
    """Time series of the +lambda and -lambda branches.

    Attributes:
        mode: How the branches shared the density
        plus: Branch states at lambda = +hbar
        minus: Branch states at lambda = -hbar
    """

    mode: EvolutionMode
    plus: list[BranchState] = field(default_factory=list)
    minus: list[BranchState] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([b.t for b in self.plus])


def _shared_step(
    H: ClassicalHamiltonian, bp: BranchState, bm: BranchState, dt: float
) -> tuple[BranchState, BranchState]:
    grid, t = bp.rho.grid, bp.t
    rho, Sp, Sm = bp.rho.values, bp.S.values, bm.S.values

    def rhs(r: np.ndarray, sp: np.ndarray, sm: np.ndarray, tau: float):
        rp, dp, vp = _branch_rhs(H, bp.lam, r, sp, grid, tau)
        rm, dm, vm = _branch_rhs(H, bm.lam, r, sm, grid, tau)
        return 0.5 * (rp + rm), dp, dm, vp, vm

    r1, p1, m1, vp, vm = rhs(rho, Sp, Sm, t)
    _check_step(H, bp.lam, vp, grid, dt)
    _check_step(H, bm.lam, vm, grid, dt)
    r2, p2, m2, _, _ = rhs(rho + 0.5 * dt * r1, Sp + 0.5 * dt * p1, Sm + 0.5 * dt * m1, t + 0.5 * dt)
    r3, p3, m3, _, _ = rhs(rho + 0.5 * dt * r2, Sp + 0.5 * dt * p2, Sm + 0.5 * dt * m2, t + 0.5 * dt)
    r4, p4, m4, _, _ = rhs(rho + dt * r3, Sp + dt * p3, Sm + dt * m3, t + dt)
    rho_new = rho + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    if rho_new.min() < 0.0:
        raise PositivityError(t + dt, float(rho_new.min()))
    Sp_new = Sp + dt / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4)
    Sm_new = Sm + dt / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
    shared = bp.rho.with_values(rho_new)
    return (
        BranchState(bp.lam, bp.S.with_values(Sp_new), shared, t + dt),
        BranchState(bm.lam, bm.S.with_values(Sm_new), shared, t + dt),
    )


def evolve_branches(
    H: ClassicalHamiltonian,
    init: MadelungState,
    dt: float,
    n_steps: int,
    mode: EvolutionMode = EvolutionMode.SHARED_RHO,
    hbar: float = DEFAULT_HBAR,
    output_every: int = 1,
) -> BranchRun:
    """Evolve the +hbar and -hbar branches from a common start.

    Shared-rho: one density advanced with the lambda-averaged right-hand
    side; each branch keeps its own S. Independent-rho: each branch carries
    its own density.
    """
    mode = EvolutionMode(mode)
    bp = BranchState(hbar, init.S, init.rho, init.t)
    bm = BranchState(-hbar, init.S, init.rho, init.t)
    run = BranchRun(mode, [bp], [bm])
    for step in range(1, n_steps + 1):
        if mode is EvolutionMode.SHARED_RHO:
            bp, bm = _shared_step(H, bp, bm, dt)
        else:
            bp, bm = branch_step(H, bp, dt), branch_step(H, bm, dt)
        if step % output_every == 0 or step == n_steps:
            run.plus.append(bp)
            run.minus.append(bm)
    logger.debug(f"Branch run ({mode.value}): {n_steps} steps to t={bp.t:.6g}")
    return run


def average_branches(bp: BranchState, bm: BranchState) -> MadelungState:
    """S_Q and rho as the lambda-average of a +/- branch pair.

    rho is renormalized when its integral is off by more than 1e-10.

    Raises:
        UsageError: If the lambdas are not opposite or the branches differ in grid or time.
    """
    if bp.lam != -bm.lam:
        raise UsageError("lam", (bp.lam, bm.lam), reason="branches need opposite lambda")
    if bp.rho.grid != bm.rho.grid or bp.t != bm.t:
        raise UsageError("branches", "grid/t", reason="branches must share grid and time")
    rho = 0.5 * (bp.rho.values + bm.rho.values)
    mass = integrate(bp.rho.with_values(rho))
    if abs(mass - 1.0) > 1e-10:
        rho = rho / mass
    S = 0.5 * (bp.S.values + bm.S.values)
    return MadelungState(bp.rho.with_values(rho), bp.S.with_values(S), bp.t)


def check_phase_symmetry(run: BranchRun) -> float:
    """Sup over time and space of |S(+hbar) - S(-hbar)|."""
    return max(
        float(np.max(np.abs(p.S.values - m.S.values)))
        for p, m in zip(run.plus, run.minus, strict=True)
    )


def fluctuation_identity_residual(rho: RealField, axis: int = 0) -> float:
    """Sup-norm residual of (rho'/rho)**2 / 4 = rho''/(2 rho) - R''/R, R = sqrt(rho).

    Every term is evaluated with the field stencils directly, so the residual
    measures discretization error only.
    """
    grid = rho.grid
    r = rho.values
    if r.min() <= 0.0:
        raise UsageError("rho", float(r.min()), reason="identity needs a positive density")
    R = np.sqrt(r)
    lhs = 0.25 * (derivative(r, grid, axis, 1) / r) ** 2
    rhs = 0.5 * derivative(r, grid, axis, 2) / r - derivative(R, grid, axis, 2) / R
    return float(np.max(np.abs(lhs - rhs)))


# ============================================================================
# Fast-flip evolution
# ============================================================================


def antithetic_pair(
    H: ClassicalHamiltonian, state: MadelungState, dt: float, lam: float
) -> MadelungState:
    """A lambda step followed by a -lambda step, each of length dt."""
    grid = state.rho.grid
    rho, S = _rk4(H, lam, state.rho.values, state.S.values, grid, state.t, dt)
    rho, S = _rk4(H, -lam, rho, S, grid, state.t + dt, dt)
    if rho.min() < 0.0:
        raise PositivityError(state.t + 2.0 * dt, float(rho.min()))
    return MadelungState(state.rho.with_values(rho), state.S.with_values(S), state.t + 2.0 * dt)


def flip_evolve(
    H: ClassicalHamiltonian,
    init: MadelungState,
    dt_macro: float,
    n_micro: int,
    seed: Seed = None,
    dist: LambdaDistribution | None = None,
    antithetic: bool = False,
    n_macro: int = 1,
) -> MadelungState:
    """Evolve one (rho, S) pair with a fresh lambda every micro-step.

    Args:
        H: Hamiltonian
        init: Start state
        dt_macro: Macro step
        n_micro: Micro-steps per macro step
        seed: Seed or generator for the lambda draws
        dist: Lambda law (default two-point at hbar = 1)
        antithetic: Split every micro-step into a lambda and a -lambda half-step
        n_macro: Number of macro steps

    Raises:
        UsageError: If n_micro < 1.
    """
    if n_micro < 1:
        raise UsageError("n_micro", n_micro, reason="need at least one micro-step")
    dist = dist or LambdaDistribution()
    rng = _rng(seed)
    dt = dt_macro / n_micro
    lams = sample_lambdas(dist, n_micro * n_macro, rng)
    grid = init.rho.grid
    rho, S, t = init.rho.values, init.S.values, init.t
    for lam in lams:
        if antithetic:
            rho, S = _rk4(H, lam, rho, S, grid, t, 0.5 * dt)
            rho, S = _rk4(H, -lam, rho, S, grid, t + 0.5 * dt, 0.5 * dt)
        else:
            rho, S = _rk4(H, lam, rho, S, grid, t, dt)
        t += dt
        if rho.min() < 0.0:
            raise PositivityError(t, float(rho.min()))
    return MadelungState(init.rho.with_values(rho), init.S.with_values(S), t)


def flip_ensemble(
    H: ClassicalHamiltonian,
    init: MadelungState,
    dt_macro: float,
    n_micro: int,
    replicas: int,
    seed: int = 0,
    dist: LambdaDistribution | None = None,
    antithetic: bool = False,
    n_macro: int = 1,
) -> list[MadelungState]:
    """Independent flip replicas, each on its own spawned RNG stream."""
    streams = np.random.SeedSequence(seed).spawn(replicas)
    return [
        flip_evolve(H, init, dt_macro, n_micro, np.random.default_rng(s), dist, antithetic, n_macro)
        for s in streams
    ]
