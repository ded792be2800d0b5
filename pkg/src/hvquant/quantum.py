"""Wavefunction propagation and the Madelung representation.

Propagators:

- ``CrankNicolson``: Cayley step with a cached sparse LU factorization and
  iterative refinement to a fixed residual
- ``MomentumSpectral`` / ``PositionSpectral`` / ``AngularSpectral``: exact
  propagators for the impulsive measurement Hamiltonians, diagonal in a
  Fourier or angular-mode basis

The Madelung side converts psi to (rho, S_Q) with a flood-fill phase unwrap
and evolves the pair directly for every Hamiltonian at most quadratic in
momentum, the measurement couplings included.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import sparse
from scipy.ndimage import map_coordinates
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import splu

from .classical import advective_limit, continuity_rhs
from .config import (
    CN_MAX_REFINEMENTS,
    CN_RESIDUAL_TOL,
    DEFAULT_HBAR,
    NODE_EPSILON,
    NORMALIZATION_TOL,
)
from .exceptions import (
    NodeError,
    SolverError,
    StabilityError,
    UnsupportedHamiltonianError,
    UsageError,
)
from .fields import ComplexField, Grid, RealField, derivative, integrate_values
from .models import PropagatorKind
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
    QuantumOperator,
    Sum,
    classical_value,
    expectation,
    norm_squared,
    quantize,
    velocity_functional,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MadelungState:
    """The pair (rho, S_Q) with psi = sqrt(rho) exp(i S_Q / hbar).

    Attributes:
        rho: Probability density
        S: Quantum phase S_Q in action units, unwrapped
        t: Time
    """

    rho: RealField
    S: RealField
    t: float = 0.0


# ============================================================================
# Wavefunction construction
# ============================================================================


def gaussian_packet(
    grid: Grid,
    center: list[float],
    width: list[float],
    wavenumber: list[float] | None = None,
) -> np.ndarray:
    """Normalized product Gaussian; ``width`` is the std of |psi|**2 per axis."""
    coords = grid.mesh()
    k = wavenumber or [0.0] * grid.rank
    psi = np.ones(grid.shape, dtype=complex)
    for q, c, s, kk in zip(coords, center, width, k, strict=True):
        psi = psi * np.exp(-((q - c) ** 2) / (4.0 * s**2) + 1j * kk * q)
    return normalize(psi, grid)


def normalize(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Scale samples so that the quadrature of |psi|**2 is one."""
    norm = float(np.real(integrate_values(np.abs(values) ** 2, grid)))
    if norm <= 0.0:
        raise UsageError("psi", "zero", reason="cannot normalize a vanishing state")
    return values / np.sqrt(norm)


def free_gaussian_width(
    sigma0: float, t: float, mass: float = 1.0, hbar: float = DEFAULT_HBAR
) -> float:
    """Density width of a free Gaussian packet at time t."""
    return sigma0 * float(np.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma0**2)) ** 2))


# ============================================================================
# Crank-Nicolson
# ============================================================================


class CrankNicolson:
    """(1 + i H dt / 2 hbar) psi' = (1 - i H dt / 2 hbar) psi.

    The LU factorization of the left-hand matrix is cached per dt for static
    operators. Each solve is refined until the relative residual drops below
    CN_RESIDUAL_TOL.

    Attributes:
        kind: Always crank-nicolson
        hbar: Reduced Planck constant
    """

    kind = PropagatorKind.CRANK_NICOLSON

    def __init__(
        self,
        operator: QuantumOperator | Callable[[float], QuantumOperator],
        hbar: float = DEFAULT_HBAR,
    ) -> None:
        """Initialize the propagator.

        Args:
            operator: Static operator, or t -> operator sampled at mid-step
            hbar: Reduced Planck constant
        """
        self.hbar = hbar
        self._static = isinstance(operator, QuantumOperator)
        self._operator = operator
        self._cache: dict[float, tuple[sparse.csc_matrix, sparse.csc_matrix, object]] = {}

    def operator_at(self, t: float) -> QuantumOperator:
        if isinstance(self._operator, QuantumOperator):
            return self._operator
        return self._operator(t)

    def _factors(self, dt: float, t: float) -> tuple[sparse.csc_matrix, sparse.csc_matrix, object]:
        if self._static and dt in self._cache:
            return self._cache[dt]
        op = self.operator_at(t + 0.5 * dt)
        eye = sparse.identity(op.grid.size, dtype=complex, format="csc")
        half = (0.5j * dt / self.hbar) * op.matrix
        lhs = (eye + half).tocsc()
        rhs = (eye - half).tocsc()
        factors = (lhs, rhs, splu(lhs))
        if self._static:
            self._cache[dt] = factors
        return factors

    def step(self, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
        """One Cayley step.

        Raises:
            SolverError: If refinement does not reach CN_RESIDUAL_TOL.
        """
        lhs, rhs, lu = self._factors(dt, t)
        b = rhs @ psi.values.ravel()
        x = lu.solve(b)
        b_norm = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
        residual = float(np.linalg.norm(b - lhs @ x)) / b_norm
        for _ in range(CN_MAX_REFINEMENTS):
            if residual <= CN_RESIDUAL_TOL:
                break
            x = x + lu.solve(b - lhs @ x)
            residual = float(np.linalg.norm(b - lhs @ x)) / b_norm
        if residual > CN_RESIDUAL_TOL:
            raise SolverError(residual, CN_RESIDUAL_TOL)
        return ComplexField(psi.grid, x.reshape(psi.grid.shape))


# ============================================================================
# Exact spectral propagators
# ============================================================================


def _require_periodic(grid: Grid, axes: tuple[int, ...], kind: str) -> None:
    for a in axes:
        if not grid.axes[a].periodic:
            raise UsageError(
                "grid", f"axis {a}", reason=f"{kind} spectral propagation needs a periodic axis"
            )


def _wavenumber_mesh(grid: Grid, axis: int) -> np.ndarray:
    shape = [1] * grid.rank
    shape[axis] = grid.axes[axis].n
    return grid.axes[axis].wavenumbers().reshape(shape)


class MomentumSpectral:
    """Exact propagator for g p1 p2: phase exp(-i g hbar k1 k2 t) in Fourier space."""

    kind = PropagatorKind.EXACT_SPECTRAL

    def __init__(self, H: MeasureMomentum, grid: Grid, hbar: float = DEFAULT_HBAR) -> None:
        _require_periodic(grid, (H.system_axis, H.pointer_axis), "momentum")
        self.H, self.grid, self.hbar = H, grid, hbar
        self._axes = (H.system_axis, H.pointer_axis)
        self._k1k2 = _wavenumber_mesh(grid, H.system_axis) * _wavenumber_mesh(
            grid, H.pointer_axis
        )

    def step(self, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
        spectrum = np.fft.fftn(psi.values, axes=self._axes)
        spectrum *= np.exp(-1j * self.H.g * self.hbar * self._k1k2 * dt)
        return ComplexField(self.grid, np.fft.ifftn(spectrum, axes=self._axes))

    def observable_expectation(self, psi: ComplexField) -> float:
        """<p1> evaluated in the Fourier basis."""
        power = np.abs(np.fft.fftn(psi.values, axes=(self.H.system_axis,))) ** 2
        k1 = _wavenumber_mesh(self.grid, self.H.system_axis)
        return float(self.hbar * np.sum(k1 * power) / np.sum(power))


class PositionSpectral:
    """Exact propagator for g q1 p2: per-k2 phase exp(-i g q1 k2 t).

    Equivalent to the pointer shift q2 -> q2 - g q1 t.
    """

    kind = PropagatorKind.EXACT_SPECTRAL

    def __init__(self, H: MeasurePosition, grid: Grid, hbar: float = DEFAULT_HBAR) -> None:
        _require_periodic(grid, (H.pointer_axis,), "position")
        self.H, self.grid, self.hbar = H, grid, hbar
        self._q1k2 = grid.mesh()[H.system_axis] * _wavenumber_mesh(grid, H.pointer_axis)

    def step(self, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
        axis = self.H.pointer_axis
        spectrum = np.fft.fft(psi.values, axis=axis)
        spectrum *= np.exp(-1j * self.H.g * self._q1k2 * dt)
        return ComplexField(self.grid, np.fft.ifft(spectrum, axis=axis))

    def observable_expectation(self, psi: ComplexField) -> float:
        """<q1> in the position basis."""
        density = np.abs(psi.values) ** 2
        q1 = self.grid.mesh()[self.H.system_axis]
        return float(
            np.real(integrate_values(q1 * density, self.grid))
            / np.real(integrate_values(density, self.grid))
        )


class AngularSpectral:
    """Exact propagator for g Lz p2 through an angular-mode decomposition.

    Each pointer-Fourier slice is resampled onto a polar grid, Fourier
    transformed in theta and advanced with the phase exp(-i g m hbar k2 t);
    the result is resampled back onto the Cartesian grid. The grid must be
    ordered (x, y, pointer) with a periodic pointer axis; rotation is about
    the origin.

    Attributes:
        n_r: Radial samples
        n_theta: Angular samples (also the number of modes)
        r_max: Largest radius inside the Cartesian box
    """

    kind = PropagatorKind.EXACT_SPECTRAL

    def __init__(
        self,
        H: MeasureAngularZ,
        grid: Grid,
        hbar: float = DEFAULT_HBAR,
        n_r: int | None = None,
        n_theta: int | None = None,
    ) -> None:
        if (H.x_axis, H.y_axis, H.pointer_axis) != (0, 1, 2) or grid.rank != 3:
            raise UsageError(
                "grid", f"rank {grid.rank}", reason="angular propagation expects axes (x, y, pointer)"
            )
        _require_periodic(grid, (2,), "angular")
        self.H, self.grid, self.hbar = H, grid, hbar
        ax, ay = grid.axes[0], grid.axes[1]
        self.r_max = min(-ax.lower, ax.upper, -ay.lower, ay.upper)
        if self.r_max <= 0:
            raise UsageError("grid", "bounds", reason="the origin must lie inside the (x, y) box")
        self.n_r = n_r or max(ax.n, ay.n)
        self.n_theta = n_theta or 2 * max(ax.n, ay.n)
        self.dr = self.r_max / self.n_r
        self.radii = (np.arange(self.n_r) + 0.5) * self.dr
        self.thetas = 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta
        self.modes = np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta)
        self.k2 = grid.axes[2].wavenumbers()
        self._pad = 4

        # Cartesian nodes in polar index space, reused by every reconstruction
        x, y = np.meshgrid(ax.coordinates, ay.coordinates, indexing="ij")
        r = np.hypot(x, y)
        theta = np.mod(np.arctan2(y, x), 2.0 * np.pi)
        self._outside = r > self.r_max
        self._back = np.stack(
            [r / self.dr - 0.5, theta / (2.0 * np.pi / self.n_theta) + self._pad]
        )

    # -- decomposition -----------------------------------------------------

    def _polar_points(self) -> np.ndarray:
        rr, tt = np.meshgrid(self.radii, self.thetas, indexing="ij")
        ax, ay = self.grid.axes[0], self.grid.axes[1]
        return np.stack(
            [(rr * np.cos(tt) - ax.lower) / ax.spacing, (rr * np.sin(tt) - ay.lower) / ay.spacing]
        )

    def decompose(self, psi: ComplexField) -> np.ndarray:
        """Mode coefficients c[r, m, k2] of a sampled state."""
        spectrum = np.fft.fft(psi.values, axis=2)
        points = self._polar_points()
        polar = np.empty((self.n_r, self.n_theta, self.grid.axes[2].n), dtype=complex)
        for j in range(spectrum.shape[2]):
            slab = spectrum[:, :, j]
            polar[:, :, j] = map_coordinates(slab.real, points, order=3, mode="nearest") + 1j * (
                map_coordinates(slab.imag, points, order=3, mode="nearest")
            )
        return np.fft.fft(polar, axis=1)

    def decompose_function(
        self, fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    ) -> np.ndarray:
        """Mode coefficients of an analytic state fn(x, y, q2), sampled exactly."""
        rr, tt, qq = np.meshgrid(
            self.radii, self.thetas, self.grid.axes[2].coordinates, indexing="ij"
        )
        polar = fn(rr * np.cos(tt), rr * np.sin(tt), qq)
        return np.fft.fft(np.fft.fft(polar, axis=2), axis=1)

    # -- evolution ---------------------------------------------------------

    def evolve_modes(self, modes: np.ndarray, t: float) -> np.ndarray:
        """Mode coefficients advanced by the phase exp(-i g m hbar k2 t)."""
        phase = np.exp(
            -1j * self.H.g * self.hbar * self.modes[None, :, None] * self.k2[None, None, :] * t
        )
        return modes * phase

    def reconstruct(self, modes: np.ndarray, t: float) -> ComplexField:
        """Cartesian state at time t from mode coefficients taken at time 0."""
        polar = np.fft.ifft(self.evolve_modes(modes, t), axis=1)
        padded = np.concatenate(
            [polar[:, -self._pad :], polar, polar[:, : self._pad]], axis=1
        )
        out = np.empty(self.grid.shape, dtype=complex)
        for j in range(padded.shape[2]):
            slab = padded[:, :, j]
            out[:, :, j] = map_coordinates(
                slab.real, self._back, order=3, mode="nearest"
            ) + 1j * map_coordinates(slab.imag, self._back, order=3, mode="nearest")
        out[self._outside] = 0.0
        return ComplexField(self.grid, np.fft.ifft(out, axis=2))

    def step(self, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
        return self.reconstruct(self.decompose(psi), dt)

    def mode_expectation(self, modes: np.ndarray) -> float:
        """<Lz> from mode coefficients (invariant under the propagation phase)."""
        weight = np.abs(modes) ** 2 * self.radii[:, None, None]
        return float(self.hbar * np.sum(self.modes[None, :, None] * weight) / np.sum(weight))

    def observable_expectation(self, psi: ComplexField) -> float:
        """<Lz> in the angular-mode basis."""
        return self.mode_expectation(self.decompose(psi))


Propagator = Union[CrankNicolson, MomentumSpectral, PositionSpectral, AngularSpectral]


def exact_propagator(
    H: ClassicalHamiltonian, grid: Grid, hbar: float = DEFAULT_HBAR
) -> MomentumSpectral | PositionSpectral | AngularSpectral:
    """Exact-spectral propagator for a measurement Hamiltonian.

    Raises:
        UnsupportedHamiltonianError: If H has no diagonalizing basis here.
    """
    if isinstance(H, MeasureMomentum):
        return MomentumSpectral(H, grid, hbar)
    if isinstance(H, MeasurePosition):
        return PositionSpectral(H, grid, hbar)
    if isinstance(H, MeasureAngularZ):
        return AngularSpectral(H, grid, hbar)
    raise UnsupportedHamiltonianError(
        type(H).__name__, "exact-spectral propagation covers the measurement kinds only"
    )


def propagate(prop: Propagator, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
    """Advance psi by dt.

    Raises:
        UsageError: If psi is not normalized.
        SolverError: If a Crank-Nicolson solve misses its residual target.
    """
    norm = norm_squared(psi)
    if abs(norm - 1.0) > NORMALIZATION_TOL:
        raise UsageError("psi", f"norm {norm:.12g}", reason="state is not normalized")
    return prop.step(psi, dt, t)


# ============================================================================
# Madelung representation
# ============================================================================


def _neighbor_graph(mask: np.ndarray) -> sparse.csr_matrix:
    shape = mask.shape
    index = np.arange(mask.size).reshape(shape)
    rows, cols = [], []
    for axis in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        rows.append(index[tuple(lo)][both])
        cols.append(index[tuple(hi)][both])
    r, c = np.concatenate(rows), np.concatenate(cols)
    data = np.ones(r.size)
    return sparse.csr_matrix((data, (r, c)), shape=(mask.size, mask.size))


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.mod(angle + np.pi, 2.0 * np.pi) - np.pi


def unwrap_phase(raw: np.ndarray, mask: np.ndarray, start: int) -> np.ndarray | None:
    """Flood-fill unwrap of a wrapped phase starting at flat index ``start``.

    Each node takes its breadth-first predecessor's phase plus the wrapped
    difference; path sums are accumulated by pointer jumping. Links never
    cross a periodic seam, so the result is single-valued on the grid.

    Returns:
        Unwrapped phase on the mask and the raw phase elsewhere, or None
        when the mask is not connected.
    """
    flat_raw = raw.ravel()
    order, pred = breadth_first_order(
        _neighbor_graph(mask), start, directed=False, return_predecessors=True
    )
    if order.size != int(mask.sum()):
        return None
    anc = np.where(pred >= 0, pred, np.arange(pred.size))
    acc = np.where(pred >= 0, _wrap(flat_raw - flat_raw[anc]), 0.0)
    while np.any(anc[order] != start):
        acc = acc + acc[anc]
        anc = anc[anc]
    out = flat_raw.copy()
    out[order] = flat_raw[start] + acc[order]
    return out.reshape(raw.shape)


def to_madelung(psi: ComplexField, hbar: float = DEFAULT_HBAR, t: float = 0.0) -> MadelungState:
    """rho = |psi|**2 and S_Q = hbar arg(psi), unwrapped from the density maximum.

    The region of interest is rho > NODE_EPSILON * max(rho); outside it the
    raw phase is kept.

    Raises:
        NodeError: If nodes split the region of interest.
    """
    rho = np.abs(psi.values) ** 2
    threshold = NODE_EPSILON * float(rho.max())
    mask = rho > threshold
    phase = unwrap_phase(np.angle(psi.values), mask, int(np.argmax(rho)))
    if phase is None:
        raise NodeError(
            float(rho.min()), threshold, "nodes split the density region; S_Q is undefined"
        )
    return MadelungState(RealField(psi.grid, rho), RealField(psi.grid, hbar * phase), t)


def from_madelung(state: MadelungState, hbar: float = DEFAULT_HBAR) -> ComplexField:
    """psi = sqrt(rho) exp(i S_Q / hbar)."""
    values = np.sqrt(np.clip(state.rho.values, 0.0, None)) * np.exp(1j * state.S.values / hbar)
    return ComplexField(state.rho.grid, values)


# ============================================================================
# Madelung evolution
# ============================================================================


def log_derivatives(rho: np.ndarray, grid: Grid, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """(dR/R, d2R/R) along one axis, from u = ln(rho).

    dR/R = u'/2 and d2R/R = u''/2 + (u')**2/4; the log form stays accurate
    in Gaussian tails where R itself underflows the stencils.
    """
    u = np.log(rho)
    du = derivative(u, grid, axis, 1)
    d2u = derivative(u, grid, axis, 2)
    return 0.5 * du, 0.5 * d2u + 0.25 * du**2


def mixed_log_derivative(rho: np.ndarray, grid: Grid, a: int, b: int) -> np.ndarray:
    """d_a d_b R / R for a != b, from u = ln(rho)."""
    u = np.log(rho)
    du_a = derivative(u, grid, a, 1)
    du_b = derivative(u, grid, b, 1)
    return 0.5 * derivative(du_a, grid, b, 1) + 0.25 * du_a * du_b


def quantum_term(
    H: ClassicalHamiltonian,
    rho: np.ndarray,
    grid: Grid,
    t: float,
    lam2: float,
) -> np.ndarray:
    """Term added to dS/dt by the replacement rules at lambda**2 = lam2.

    EM particle: (lam2 / 2m) lap(R)/R. Position-dependent mass:
    lam2 (B R''/R + B' R'/R). Linear drift and g q1 p2: none.
    g p1 p2: g lam2 d1d2R/R. g Lz p2: g lam2 (x dy d2R - y dx d2R)/R.
    (g/2)(B p1 + p1 B) p2: g lam2 (B d1d2R/R + B' d2R / 2R).

    Raises:
        UnsupportedHamiltonianError: For B(q) p**n with n >= 3.
    """
    if isinstance(H, EmParticle):
        total = np.zeros_like(rho)
        for k in range(grid.rank):
            total = total + log_derivatives(rho, grid, k)[1]
        return lam2 / (2.0 * H.mass) * total
    if isinstance(H, PdmQuadratic):
        q = grid.mesh()[H.axis]
        first, second = log_derivatives(rho, grid, H.axis)
        return lam2 * (H.b(q) * second + H.b.derivative(q) * first)
    if isinstance(H, (LinearDrift, MeasurePosition)):
        return np.zeros_like(rho)
    if isinstance(H, MomentumPower) and H.power == 1:
        return np.zeros_like(rho)
    if isinstance(H, MomentumPower) and H.power == 2:
        return quantum_term(PdmQuadratic(H.b, H.axis), rho, grid, t, lam2)
    if isinstance(H, MeasureMomentum):
        return H.g * lam2 * mixed_log_derivative(rho, grid, H.system_axis, H.pointer_axis)
    if isinstance(H, MeasureAngularZ):
        coords = grid.mesh()
        x, y = coords[H.x_axis], coords[H.y_axis]
        lz = x * mixed_log_derivative(rho, grid, H.y_axis, H.pointer_axis) - y * (
            mixed_log_derivative(rho, grid, H.x_axis, H.pointer_axis)
        )
        return H.g * lam2 * lz
    if isinstance(H, MeasureLinearObservable):
        q = grid.mesh()[H.system_axis]
        first = log_derivatives(rho, grid, H.pointer_axis)[0]
        mixed = mixed_log_derivative(rho, grid, H.system_axis, H.pointer_axis)
        return H.g * lam2 * (H.b(q) * mixed + 0.5 * H.b.derivative(q) * first)
    if isinstance(H, Sum):
        total = np.zeros_like(rho)
        for c, member in H.terms:
            total = total + c * quantum_term(member, rho, grid, t, lam2)
        return total
    raise UnsupportedHamiltonianError(
        type(H).__name__, "no Madelung pair; use the wavefunction propagators"
    )


def check_nodes(rho: np.ndarray, reference: float | None = None) -> None:
    """Raise NodeError if rho drops below NODE_EPSILON * max(rho) anywhere."""
    scale = float(rho.max()) if reference is None else reference
    threshold = NODE_EPSILON * scale
    low = float(rho.min())
    if not low > threshold:
        raise NodeError(low, threshold)


def madelung_rhs(
    H: ClassicalHamiltonian,
    state: MadelungState,
    hbar: float = DEFAULT_HBAR,
    include_quantum: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """(d rho/dt, dS_Q/dt) of the Madelung pair.

    Raises:
        NodeError: If rho has a node.
    """
    drho, dS, _ = _madelung_rhs(
        H, state.rho.values, state.S.values, state.rho.grid, state.t, hbar, include_quantum
    )
    return drho, dS


def _madelung_rhs(
    H: ClassicalHamiltonian,
    rho: np.ndarray,
    S: np.ndarray,
    grid: Grid,
    t: float,
    hbar: float,
    include_quantum: bool,
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    check_nodes(rho)
    coords = grid.mesh()
    grad = [derivative(S, grid, k, 1) for k in range(grid.rank)]
    v = velocity_functional(H).from_gradient(grad, coords, t)
    dS = -classical_value(H, grad, coords, t)
    if include_quantum:
        dS = dS + quantum_term(H, rho, grid, t, hbar**2)
    return continuity_rhs(v, rho, grid), dS, v


def evolve_madelung(
    H: ClassicalHamiltonian,
    state: MadelungState,
    dt: float,
    hbar: float = DEFAULT_HBAR,
    include_quantum: bool = True,
) -> MadelungState:
    """One RK4 step of the Madelung pair.

    Continuity with v = f(S_Q) and dS_Q/dt = -H(q, dS_Q/dq) plus the quantum
    term. Without the quantum term this is the classical hj_step.

    Raises:
        NodeError: If rho falls under the node threshold at any stage.
        StabilityError: If dt exceeds the advective CFL bound.
    """
    grid, t = state.rho.grid, state.t
    rho, S = state.rho.values, state.S.values
    r1, s1, v = _madelung_rhs(H, rho, S, grid, t, hbar, include_quantum)
    limit = advective_limit(v, grid)
    if dt > limit:
        raise StabilityError(dt, limit, "advective")
    r2, s2, _ = _madelung_rhs(
        H, rho + 0.5 * dt * r1, S + 0.5 * dt * s1, grid, t + 0.5 * dt, hbar, include_quantum
    )
    r3, s3, _ = _madelung_rhs(
        H, rho + 0.5 * dt * r2, S + 0.5 * dt * s2, grid, t + 0.5 * dt, hbar, include_quantum
    )
    r4, s4, _ = _madelung_rhs(
        H, rho + dt * r3, S + dt * s3, grid, t + dt, hbar, include_quantum
    )
    rho_new = rho + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    S_new = S + dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
    check_nodes(rho_new)
    return MadelungState(state.rho.with_values(rho_new), state.S.with_values(S_new), t + dt)


# ============================================================================
# Observables
# ============================================================================


def energy(
    H: ClassicalHamiltonian,
    source: ComplexField | MadelungState,
    hbar: float = DEFAULT_HBAR,
    t: float = 0.0,
) -> float:
    """Average energy along either evaluation path.

    Wavefunction: <psi, H psi>. Madelung: the density-weighted effective
    energy -dS_Q/dt from the Madelung right-hand side.
    """
    if isinstance(source, ComplexField):
        return expectation(quantize(H, source.grid, hbar, t), source)
    _, dS = madelung_rhs(H, source, hbar)
    return float(np.real(integrate_values(-source.rho.values * dS, source.rho.grid)))


def uncertainty_product(
    psi: ComplexField, axis: int = 0, hbar: float = DEFAULT_HBAR
) -> tuple[float, float, float]:
    """(sigma_q, sigma_p, sigma_q * sigma_p) along one axis.

    sigma_q comes from position moments of |psi|**2; sigma_p from the
    discrete Fourier power spectrum along the axis.
    """
    grid = psi.grid
    grid._check_axis(axis)
    density = np.abs(psi.values) ** 2
    norm = float(np.real(integrate_values(density, grid)))
    q = grid.mesh()[axis]
    mean_q = float(np.real(integrate_values(q * density, grid))) / norm
    var_q = float(np.real(integrate_values((q - mean_q) ** 2 * density, grid))) / norm

    power = np.abs(np.fft.fft(psi.values, axis=axis)) ** 2
    k = _wavenumber_mesh(grid, axis)
    total = float(np.sum(power))
    mean_p = hbar * float(np.sum(k * power)) / total
    var_p = hbar**2 * float(np.sum(k**2 * power)) / total - mean_p**2

    sigma_q, sigma_p = float(np.sqrt(var_q)), float(np.sqrt(max(var_p, 0.0)))
    return sigma_q, sigma_p, sigma_q * sigma_p


def observables(
    psi: ComplexField, op: QuantumOperator, t: float, hbar: float = DEFAULT_HBAR
) -> dict[str, float]:
    """One row of the observable time series (t, norm, energy, sigma_q, sigma_p)."""
    sigma_q, sigma_p, _ = uncertainty_product(psi, 0, hbar)
    return {
        "t": t,
        "norm": norm_squared(psi),
        "energy": expectation(op, psi),
        "sigma_q": sigma_q,
        "sigma_p": sigma_p,
    }
