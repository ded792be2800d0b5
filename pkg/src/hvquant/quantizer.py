"""Classical Hamiltonian catalog, velocity functionals and quantization.

The catalog covers the electromagnetic particle, position-dependent mass
B(q)p**2, the linear drift B(q)p, the general B(q)p**n (which only quantizes
for n <= 2) and the four impulsive measurement interactions. Each entry has

- a classical value H(q, dS/dq; t) used by the Hamilton-Jacobi stepper,
- a velocity functional f(S) = dH/dp evaluated at p = dS/dq,
- a unique Hermitian operator built from sparse 4th-order derivative matrices.

Example:
    >>> grid = Grid.from_bounds([(128, -10.0, 10.0, "dirichlet")])
    >>> op = quantize(PdmQuadratic(Profile.polynomial([0.5])), grid)
    >>> op.descriptor
    'p^2/2m'
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import reduce
from typing import Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy import sparse

from .config import DEFAULT_HBAR, HERMITICITY_TOL, NORMALIZATION_TOL
from .exceptions import (
    DegenerateTestError,
    HermiticityError,
    UnsupportedHamiltonianError,
    UsageError,
)
from .fields import (
    Axis,
    ComplexField,
    Grid,
    RealField,
    derivative,
    integrate_values,
)

logger = logging.getLogger(__name__)

Coords = tuple[np.ndarray, ...]
VectorPotential = Callable[[Coords, float], tuple[np.ndarray, ...]]
ScalarFunction = Callable[[Coords, float], np.ndarray]


# ============================================================================
# Profiles B(q)
# ============================================================================


@dataclass(frozen=True)
class Profile:
    """Analytic real function of one coordinate together with its derivative.

    Attributes:
        fn: q -> B(q)
        deriv: q -> B'(q)
        label: Stable text used in descriptors and manifests
        constant: Value when B does not depend on q, else None
    """

    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    label: str = "B(q)"
    constant: float | None = None

    @classmethod
    def polynomial(cls, coefficients: Sequence[float], label: str | None = None) -> "Profile":
        """Profile c0 + c1 q + c2 q**2 + ... with its exact derivative."""
        poly = Polynomial(np.asarray(coefficients, dtype=float)).trim()
        dpoly = poly.deriv()
        constant = float(poly.coef[0]) if poly.degree() == 0 else None
        if label is None:
            label = f"{constant:g}" if constant is not None else "B(q)"
        return cls(fn=poly, deriv=dpoly, label=label, constant=constant)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(q), dtype=float), q.shape)

    def derivative(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(self.deriv(q), dtype=float), q.shape)


# ============================================================================
# Classical Hamiltonians
# ============================================================================


@dataclass(frozen=True)
class EmParticle:
    """H = (p - (e/c)A)**2 / 2m + eV.

    Attributes:
        mass: Particle mass m
        charge: Charge e
        c_light: Speed of light c
        vector_potential: (coords, t) -> per-axis components A_k, or None
        vector_divergence: (coords, t) -> div A, required with a vector potential
        scalar_potential: (coords, t) -> V, or None
    """

    mass: float = 1.0
    charge: float = 1.0
    c_light: float = 1.0
    vector_potential: VectorPotential | None = None
    vector_divergence: ScalarFunction | None = None
    scalar_potential: ScalarFunction | None = None

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise UsageError("mass", self.mass, reason="mass must be positive")
        if self.vector_potential is not None and self.vector_divergence is None:
            raise UsageError(
                "vector_divergence", None, reason="a vector potential needs its divergence"
            )

    @property
    def coupling(self) -> float:
        """e/c, the single coupling folded into the minimal substitution."""
        return self.charge / self.c_light

    @classmethod
    def harmonic(cls, mass: float = 1.0, omega: float = 1.0) -> "EmParticle":
        """Isotropic oscillator V = m omega**2 |q|**2 / 2 with unit charge."""
        k = mass * omega**2
        return cls(
            mass=mass,
            scalar_potential=lambda coords, t: 0.5 * k * sum(q**2 for q in coords),
        )

    @classmethod
    def from_polynomials(
        cls,
        mass: float = 1.0,
        charge: float = 1.0,
        c_light: float = 1.0,
        potential: Sequence[float] | None = None,
        vector_potential: Sequence[Sequence[float]] | None = None,
    ) -> "EmParticle":
        """Static potentials from coefficient lists.

        V is the sum over axes of one polynomial in each coordinate; A_k is a
        polynomial in q_k alone.
        """
        v_poly = Polynomial(np.asarray(potential, dtype=float)) if potential else None
        a_polys = [Polynomial(np.asarray(c, dtype=float)) for c in vector_potential or []]
        da_polys = [p.deriv() for p in a_polys]

        def scalar(coords: Coords, t: float) -> np.ndarray:
            return sum((v_poly(q) for q in coords), np.zeros_like(coords[0]))

        def vector(coords: Coords, t: float) -> tuple[np.ndarray, ...]:
            return tuple(
                np.broadcast_to(a_polys[k](q), q.shape)
                if k < len(a_polys)
                else np.zeros_like(q)
                for k, q in enumerate(coords)
            )

        def divergence(coords: Coords, t: float) -> np.ndarray:
            total = np.zeros_like(coords[0])
            for k, q in enumerate(coords[: len(da_polys)]):
                total = total + da_polys[k](q)
            return total

        return cls(
            mass,
            charge,
            c_light,
            vector if a_polys else None,
            divergence if a_polys else None,
            scalar if v_poly is not None else None,
        )


@dataclass(frozen=True)
class PdmQuadratic:
    """Position-dependent mass, H = B(q) p**2 along one axis."""

    b: Profile
    axis: int = 0


@dataclass(frozen=True)
class LinearDrift:
    """H = B(q) p along one axis."""

    b: Profile
    axis: int = 0


@dataclass(frozen=True)
class MomentumPower:
    """H = B(q) p**n along one axis."""

    b: Profile
    power: int
    axis: int = 0


@dataclass(frozen=True)
class MeasureMomentum:
    """Impulsive momentum measurement, H = g p1 p2."""

    g: float
    system_axis: int = 0
    pointer_axis: int = 1


@dataclass(frozen=True)
class MeasurePosition:
    """Impulsive position measurement, H = g q1 p2."""

    g: float
    system_axis: int = 0
    pointer_axis: int = 1


@dataclass(frozen=True)
class MeasureAngularZ:
    """Impulsive angular-momentum measurement, H = g (x p_y - y p_x) p2."""

    g: float
    x_axis: int = 0
    y_axis: int = 1
    pointer_axis: int = 2


@dataclass(frozen=True)
class MeasureLinearObservable:
    """Measurement of A1 = B(q1) p1, H = g B(q1) p1 p2."""

    g: float
    b: Profile
    system_axis: int = 0
    pointer_axis: int = 1


@dataclass(frozen=True)
class Sum:
    """Real-weighted sum of catalog Hamiltonians."""

    terms: tuple[tuple[float, "ClassicalHamiltonian"], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "terms", tuple((float(c), h) for c, h in self.terms)
        )


ClassicalHamiltonian = Union[
    EmParticle,
    PdmQuadratic,
    LinearDrift,
    MomentumPower,
    MeasureMomentum,
    MeasurePosition,
    MeasureAngularZ,
    MeasureLinearObservable,
    Sum,
]

_CATALOG = (
    EmParticle,
    PdmQuadratic,
    LinearDrift,
    MomentumPower,
    MeasureMomentum,
    MeasurePosition,
    MeasureAngularZ,
    MeasureLinearObservable,
    Sum,
)


def required_rank(H: ClassicalHamiltonian) -> int:
    """Smallest grid rank that carries every axis H refers to."""
    if isinstance(H, EmParticle):
        return 1
    if isinstance(H, (PdmQuadratic, LinearDrift, MomentumPower)):
        return H.axis + 1
    if isinstance(H, (MeasureMomentum, MeasurePosition, MeasureLinearObservable)):
        return max(H.system_axis, H.pointer_axis) + 1
    if isinstance(H, MeasureAngularZ):
        return max(H.x_axis, H.y_axis, H.pointer_axis) + 1
    if isinstance(H, Sum):
        return max((required_rank(h) for _, h in H.terms), default=1)
    raise UnsupportedHamiltonianError(type(H).__name__, "not in the catalog")


def _check_rank(H: ClassicalHamiltonian, rank: int) -> None:
    needed = required_rank(H)
    if rank < needed:
        raise UsageError(
            "grid", f"rank {rank}", reason=f"{type(H).__name__} needs rank >= {needed}"
        )


def classical_value(
    H: ClassicalHamiltonian, grad_S: Sequence[np.ndarray], coords: Coords, t: float = 0.0
) -> np.ndarray:
    """Evaluate H(q, dS/dq; t) sample by sample.

    Args:
        H: Catalog Hamiltonian
        grad_S: One momentum component per grid axis
        coords: Mesh coordinates (ij indexing)
        t: Time

    Returns:
        Array with the grid shape.
    """
    zeros = np.zeros_like(coords[0])
    if isinstance(H, EmParticle):
        kinetic = zeros.copy()
        a = H.vector_potential(coords, t) if H.vector_potential else None
        for k, p in enumerate(grad_S):
            mech = p - H.coupling * a[k] if a is not None else p
            kinetic = kinetic + mech**2
        value = kinetic / (2.0 * H.mass)
        if H.scalar_potential is not None:
            value = value + H.charge * H.scalar_potential(coords, t)
        return value
    if isinstance(H, PdmQuadratic):
        return H.b(coords[H.axis]) * grad_S[H.axis] ** 2
    if isinstance(H, LinearDrift):
        return H.b(coords[H.axis]) * grad_S[H.axis]
    if isinstance(H, MomentumPower):
        return H.b(coords[H.axis]) * grad_S[H.axis] ** H.power
    if isinstance(H, MeasureMomentum):
        return H.g * grad_S[H.system_axis] * grad_S[H.pointer_axis]
    if isinstance(H, MeasurePosition):
        return H.g * coords[H.system_axis] * grad_S[H.pointer_axis]
    if isinstance(H, MeasureAngularZ):
        x, y = coords[H.x_axis], coords[H.y_axis]
        lz = x * grad_S[H.y_axis] - y * grad_S[H.x_axis]
        return H.g * lz * grad_S[H.pointer_axis]
    if isinstance(H, MeasureLinearObservable):
        b = H.b(coords[H.system_axis])
        return H.g * b * grad_S[H.system_axis] * grad_S[H.pointer_axis]
    if isinstance(H, Sum):
        total = zeros.copy()
        for c, member in H.terms:
            total = total + c * classical_value(member, grad_S, coords, t)
        return total
    raise UnsupportedHamiltonianError(type(H).__name__, "not in the catalog")


# ============================================================================
# Velocity functional
# ============================================================================


def _velocity_from_gradient(
    H: ClassicalHamiltonian, grad_S: Sequence[np.ndarray], coords: Coords, t: float
) -> list[np.ndarray]:
    rank = len(coords)
    v = [np.zeros_like(coords[0]) for _ in range(rank)]
    if isinstance(H, EmParticle):
        a = H.vector_potential(coords, t) if H.vector_potential else None
        for k in range(rank):
            mech = grad_S[k] - H.coupling * a[k] if a is not None else grad_S[k]
            v[k] = mech / H.mass
    elif isinstance(H, PdmQuadratic):
        v[H.axis] = 2.0 * H.b(coords[H.axis]) * grad_S[H.axis]
    elif isinstance(H, LinearDrift):
        v[H.axis] = np.array(H.b(coords[H.axis]))
    elif isinstance(H, MomentumPower):
        v[H.axis] = H.power * H.b(coords[H.axis]) * grad_S[H.axis] ** (H.power - 1)
    elif isinstance(H, MeasureMomentum):
        v[H.system_axis] = H.g * grad_S[H.pointer_axis]
        v[H.pointer_axis] = H.g * grad_S[H.system_axis]
    elif isinstance(H, MeasurePosition):
        v[H.pointer_axis] = H.g * coords[H.system_axis]
    elif isinstance(H, MeasureAngularZ):
        x, y = coords[H.x_axis], coords[H.y_axis]
        p2 = grad_S[H.pointer_axis]
        v[H.x_axis] = -H.g * y * p2
        v[H.y_axis] = H.g * x * p2
        v[H.pointer_axis] = H.g * (x * grad_S[H.y_axis] - y * grad_S[H.x_axis])
    elif isinstance(H, MeasureLinearObservable):
        b = H.b(coords[H.system_axis])
        v[H.system_axis] = H.g * b * grad_S[H.pointer_axis]
        v[H.pointer_axis] = H.g * b * grad_S[H.system_axis]
    elif isinstance(H, Sum):
        for c, member in H.terms:
            for k, vk in enumerate(_velocity_from_gradient(member, grad_S, coords, t)):
                v[k] = v[k] + c * vk
    else:
        raise UnsupportedHamiltonianError(type(H).__name__, "not in the catalog")
    return v


def _uses_phase(H: ClassicalHamiltonian) -> bool:
    if isinstance(H, (MeasurePosition, LinearDrift)):
        return False
    if isinstance(H, Sum):
        return any(_uses_phase(h) for c, h in H.terms if c != 0)
    return True


@dataclass(frozen=True)
class VelocityFunctional:
    """f(S) = dH/dp at p = dS/dq.

    Attributes:
        hamiltonian: Source Hamiltonian
        uses_phase: False when the velocity does not depend on S at all
    """

    hamiltonian: ClassicalHamiltonian
    uses_phase: bool

    def from_gradient(
        self, grad_S: Sequence[np.ndarray], coords: Coords, t: float = 0.0
    ) -> list[np.ndarray]:
        """Velocity components from a precomputed action gradient."""
        return _velocity_from_gradient(self.hamiltonian, grad_S, coords, t)

    def __call__(self, S: RealField, t: float = 0.0) -> list[RealField]:
        grid = S.grid
        _check_rank(self.hamiltonian, grid.rank)
        grad = [derivative(S.values, grid, k, 1) for k in range(grid.rank)]
        return [S.with_values(v) for v in self.from_gradient(grad, grid.mesh(), t)]

    def divergence(self, S: RealField, t: float = 0.0) -> RealField:
        """d/dq . f(S), the term the replacement rules act on."""
        H = self.hamiltonian
        if isinstance(H, EmParticle):
            lap = sum(derivative(S.values, S.grid, k, 2) for k in range(S.grid.rank))
            if H.vector_divergence is not None:
                lap = lap - H.coupling * H.vector_divergence(S.grid.mesh(), t)
            return S.with_values(lap / H.mass)
        components = self(S, t)
        total = np.zeros_like(S.values)
        for k, vk in enumerate(components):
            total = total + derivative(vk.values, S.grid, k, 1)
        return S.with_values(total)


def velocity_functional(H: ClassicalHamiltonian) -> VelocityFunctional:
    """Velocity functional of a catalog Hamiltonian.

    Raises:
        UnsupportedHamiltonianError: If H is not a catalog entry.
    """
    if not isinstance(H, _CATALOG):
        raise UnsupportedHamiltonianError(type(H).__name__, "not in the catalog")
    return VelocityFunctional(H, _uses_phase(H))


# ============================================================================
# Sparse derivative matrices
# ============================================================================


def first_derivative_matrix(ax: Axis) -> sparse.csr_matrix:
    """4th-order central d/dq; dirichlet axes are zero-padded (antisymmetric)."""
    n, c = ax.n, 1.0 / (12.0 * ax.spacing)
    offsets = [-2, -1, 1, 2]
    values = [c, -8.0 * c, 8.0 * c, -c]
    if ax.periodic:
        offsets += [n - 2, n - 1, -(n - 1), -(n - 2)]
        values += [c, -8.0 * c, 8.0 * c, -c]
    return sparse.diags(values, offsets, shape=(n, n), format="csr")


def second_derivative_matrix(ax: Axis) -> sparse.csr_matrix:
    """4th-order central d2/dq2; dirichlet axes are zero-padded (symmetric)."""
    n, c = ax.n, 1.0 / (12.0 * ax.spacing**2)
    offsets = [-2, -1, 0, 1, 2]
    values = [-c, 16.0 * c, -30.0 * c, 16.0 * c, -c]
    if ax.periodic:
        offsets += [n - 2, n - 1, -(n - 1), -(n - 2)]
        values += [-c, 16.0 * c, 16.0 * c, -c]
    return sparse.diags(values, offsets, shape=(n, n), format="csr")


def _embed(grid: Grid, axis: int, block: sparse.spmatrix) -> sparse.csr_matrix:
    factors = [
        block if k == axis else sparse.identity(ax.n, format="csr")
        for k, ax in enumerate(grid.axes)
    ]
    return reduce(lambda a, b: sparse.kron(a, b, format="csr"), factors).tocsr()


def _diag(values: np.ndarray) -> sparse.csr_matrix:
    return sparse.diags(np.ravel(values), 0, format="csr")


def momentum_matrix(grid: Grid, axis: int, hbar: float) -> sparse.csr_matrix:
    """-i hbar d/dq_axis on the flattened grid."""
    return (-1j * hbar) * _embed(grid, axis, first_derivative_matrix(grid.axes[axis]))


def momentum_squared_matrix(grid: Grid, axis: int, hbar: float) -> sparse.csr_matrix:
    """-hbar**2 d2/dq_axis**2 on the flattened grid."""
    return (-(hbar**2)) * _embed(grid, axis, second_derivative_matrix(grid.axes[axis]))


def _symmetrized(b: np.ndarray, p: sparse.spmatrix) -> sparse.csr_matrix:
    bm = _diag(b)
    return (0.5 * (bm @ p + p @ bm)).tocsr()


def _pdm_matrix(b: Profile, grid: Grid, axis: int, hbar: float) -> sparse.csr_matrix:
    q = grid.mesh()[axis]
    p2 = momentum_squared_matrix(grid, axis, hbar)
    if b.constant is not None:
        return (b.constant * p2).tocsr()
    # p B p = sym(B p^2) + (hbar^2/2) B''
    b_second = derivative(b.derivative(q), grid, axis, 1)
    return (_symmetrized(b(q), p2) + _diag(0.5 * hbar**2 * b_second)).tocsr()


# ============================================================================
# Quantum operators
# ============================================================================


@dataclass(frozen=True, eq=False)
class QuantumOperator:
    """Discretized Hermitian operator with its ordering descriptor.

    Attributes:
        descriptor: Human-readable normal form, e.g. "p·B(q)·p"
        matrix: Sparse matrix acting on row-major flattened samples
        grid: Grid the operator acts on
        hermitian: Whether matrix equals its conjugate transpose to round-off
    """

    descriptor: str
    matrix: sparse.csr_matrix
    grid: Grid
    hermitian: bool = True

    def apply(self, psi: ComplexField) -> ComplexField:
        """Return H psi."""
        if psi.grid != self.grid:
            raise UsageError("psi", "grid", reason="field lives on a different grid")
        out = self.matrix @ psi.values.ravel()
        return ComplexField(self.grid, out.reshape(self.grid.shape))

    __call__ = apply

    def __add__(self, other: "QuantumOperator") -> "QuantumOperator":
        return QuantumOperator(
            f"{self.descriptor} + {other.descriptor}",
            (self.matrix + other.matrix).tocsr(),
            self.grid,
            self.hermitian and other.hermitian,
        )

    def scaled(self, c: float) -> "QuantumOperator":
        return QuantumOperator(
            f"{c:g}*[{self.descriptor}]", (c * self.matrix).tocsr(), self.grid, self.hermitian
        )


def _is_hermitian(matrix: sparse.spmatrix) -> bool:
    scale = abs(matrix).max() if matrix.nnz else 0.0
    gap = abs(matrix - matrix.conj().T).max() if matrix.nnz else 0.0
    return bool(gap <= 1e-12 * max(scale, 1.0))


def _em_descriptor(H: EmParticle) -> str:
    kinetic = "(p-(e/c)A(q))^2/2m" if H.vector_potential else "p^2/2m"
    return kinetic + (" + eV(q)" if H.scalar_potential else "")


def _pdm_descriptor(b: Profile) -> str:
    return "p^2/2m" if b.constant is not None else "p·B(q)·p"


def _drift_descriptor(b: Profile) -> str:
    if b.constant == 1.0:
        return "p"
    if b.constant is not None:
        return f"{b.constant:g}·p"
    return "(B(q)·p+p·B(q))/2"


def _quantize(H: ClassicalHamiltonian, grid: Grid, hbar: float, t: float) -> QuantumOperator:
    coords = grid.mesh()

    if isinstance(H, EmParticle):
        matrix = sparse.csr_matrix((grid.size, grid.size), dtype=complex)
        a = H.vector_potential(coords, t) if H.vector_potential else None
        kappa = H.coupling
        for k in range(grid.rank):
            term = momentum_squared_matrix(grid, k, hbar)
            if a is not None:
                p = momentum_matrix(grid, k, hbar)
                term = term - 2.0 * kappa * _symmetrized(a[k], p) + _diag(kappa**2 * a[k] ** 2)
            matrix = matrix + term
        matrix = matrix / (2.0 * H.mass)
        if H.scalar_potential is not None:
            matrix = matrix + _diag(H.charge * H.scalar_potential(coords, t))
        return QuantumOperator(_em_descriptor(H), matrix.tocsr(), grid)

    if isinstance(H, PdmQuadratic):
        return QuantumOperator(
            _pdm_descriptor(H.b), _pdm_matrix(H.b, grid, H.axis, hbar), grid
        )

    if isinstance(H, LinearDrift):
        p = momentum_matrix(grid, H.axis, hbar)
        return QuantumOperator(
            _drift_descriptor(H.b), _symmetrized(H.b(coords[H.axis]), p), grid
        )

    if isinstance(H, MomentumPower):
        if H.power == 1:
            return _quantize(LinearDrift(H.b, H.axis), grid, hbar, t)
        if H.power == 2:
            return _quantize(PdmQuadratic(H.b, H.axis), grid, hbar, t)
        raise UnsupportedHamiltonianError(
            f"B(q)p^{H.power}",
            "the replacement rules fix an operator ordering only up to quadratic "
            "order in momentum; for p^3 and higher the answer is negative",
        )

    if isinstance(H, MeasureMomentum):
        p1 = momentum_matrix(grid, H.system_axis, hbar)
        p2 = momentum_matrix(grid, H.pointer_axis, hbar)
        return QuantumOperator("g·p1·p2", (H.g * (p1 @ p2)).tocsr(), grid)

    if isinstance(H, MeasurePosition):
        p2 = momentum_matrix(grid, H.pointer_axis, hbar)
        q1 = _diag(coords[H.system_axis])
        return QuantumOperator("g·q1·p2", (H.g * (q1 @ p2)).tocsr(), grid)

    if isinstance(H, MeasureAngularZ):
        px = momentum_matrix(grid, H.x_axis, hbar)
        py = momentum_matrix(grid, H.y_axis, hbar)
        p2 = momentum_matrix(grid, H.pointer_axis, hbar)
        lz = _diag(coords[H.x_axis]) @ py - _diag(coords[H.y_axis]) @ px
        return QuantumOperator("g·Lz1·p2", (H.g * (lz @ p2)).tocsr(), grid)

    if isinstance(H, MeasureLinearObservable):
        p1 = momentum_matrix(grid, H.system_axis, hbar)
        p2 = momentum_matrix(grid, H.pointer_axis, hbar)
        a1 = _symmetrized(H.b(coords[H.system_axis]), p1)
        return QuantumOperator(
            "(g/2)(B(q1)·p1+p1·B(q1))·p2", (H.g * (a1 @ p2)).tocsr(), grid
        )

    if isinstance(H, Sum):
        if not H.terms:
            raise UsageError("terms", (), reason="empty sum")
        parts = [_quantize(h, grid, hbar, t) for _, h in H.terms]
        matrix = reduce(
            lambda acc, cp: acc + cp[0] * cp[1].matrix,
            zip([c for c, _ in H.terms], parts, strict=True),
            sparse.csr_matrix((grid.size, grid.size), dtype=complex),
        )
        descriptor = " + ".join(
            f"{c:g}*[{op.descriptor}]" for (c, _), op in zip(H.terms, parts, strict=True)
        )
        return QuantumOperator(descriptor, matrix.tocsr(), grid)

    raise UnsupportedHamiltonianError(type(H).__name__, "not in the catalog")


def quantize(
    H: ClassicalHamiltonian, grid: Grid, hbar: float = DEFAULT_HBAR, t: float = 0.0
) -> QuantumOperator:
    """Map a catalog Hamiltonian to its unique Hermitian operator.

    Args:
        H: Catalog Hamiltonian
        grid: Grid to discretize on
        hbar: Reduced Planck constant
        t: Sampling time for time-dependent potentials

    Returns:
        QuantumOperator with descriptor, sparse matrix and hermitian flag.

    Raises:
        UnsupportedHamiltonianError: For B(q)p^n with n >= 3 or unknown variants.
        UsageError: If the grid rank is too small for H.
    """
    _check_rank(H, grid.rank)
    op = _quantize(H, grid, hbar, t)
    hermitian = _is_hermitian(op.matrix)
    logger.debug(f"Quantized {type(H).__name__} -> {op.descriptor} (nnz={op.matrix.nnz})")
    return QuantumOperator(op.descriptor, op.matrix, grid, hermitian)


# ============================================================================
# Ordering gap and expectation values
# ============================================================================


def ordering_gap(
    b: Profile,
    grid: Grid,
    hbar: float = DEFAULT_HBAR,
    test_width: float | None = None,
) -> RealField:
    """(p B p - (p^2 B + B p^2)/2) psi / psi on a nodeless Gaussian test field.

    For B = q**2 the canonical commutation relation makes this the constant
    hbar**2.

    Args:
        b: Profile B(q)
        grid: 1-D grid
        hbar: Reduced Planck constant
        test_width: Gaussian width of the test field (default: a quarter of the domain)

    Raises:
        UsageError: If the grid is not 1-D.
        DegenerateTestError: If the test field nearly vanishes somewhere.
    """
    if grid.rank != 1:
        raise UsageError("grid", f"rank {grid.rank}", reason="ordering gap is 1-D")
    ax = grid.axes[0]
    q = ax.coordinates
    width = test_width if test_width is not None else ax.length / 4.0
    center = 0.5 * (ax.lower + ax.upper)
    psi = np.exp(-((q - center) ** 2) / (2.0 * width**2))
    if psi.min() < 1e-10 * psi.max():
        raise DegenerateTestError(float(psi.min()))

    bq = b(q)
    sandwich = -(hbar**2) * derivative(bq * derivative(psi, grid, 0, 1), grid, 0, 1)
    symmetric = -0.5 * hbar**2 * (
        derivative(bq * psi, grid, 0, 2) + bq * derivative(psi, grid, 0, 2)
    )
    return RealField(grid, (sandwich - symmetric) / psi)


def norm_squared(psi: ComplexField) -> float:
    """Quadrature of |psi|**2."""
    return float(np.real(integrate_values(np.abs(psi.values) ** 2, psi.grid)))


def expectation(op: QuantumOperator, psi: ComplexField) -> float:
    """Re <psi, H psi> with hermiticity and normalization checks.

    Raises:
        UsageError: If psi is not normalized within NORMALIZATION_TOL.
        HermiticityError: If the imaginary part exceeds HERMITICITY_TOL.
    """
    norm = norm_squared(psi)
    if abs(norm - 1.0) > NORMALIZATION_TOL:
        raise UsageError("psi", f"norm {norm:.12g}", reason="state is not normalized")
    h_psi = op.apply(psi).values
    value = complex(integrate_values(np.conj(psi.values) * h_psi, psi.grid))
    if abs(value.imag) > HERMITICITY_TOL * max(1.0, abs(value.real)):
        raise HermiticityError(value.imag)
    return value.real
