"""Data models and type definitions for hvquant.

This module contains the Enums, type aliases and Pydantic models used
throughout the simulator: scenario configuration sections, the measurement
configuration and the run manifest.
"""

from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import DEFAULT_HBAR

# ============================================================================
# Enums
# ============================================================================


class BoundaryKind(str, Enum):
    """Boundary treatment of a grid axis.

    Attributes:
        PERIODIC: Wraparound stencils, rectangle quadrature
        DIRICHLET: Field vanishes outside the closed interval, trapezoid quadrature
    """

    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


class ScenarioKind(str, Enum):
    """Scenario kinds understood by the runner.

    Attributes:
        EVOLVE_CLASSICAL: Hamilton-Jacobi plus continuity evolution
        EVOLVE_QUANTUM: Schroedinger propagation
        EVOLVE_MADELUNG: Direct evolution of the (rho, S_Q) pair
        HV_BRANCHES: Paired +/- lambda branch evolution
        HV_FLIP: Fast-flip stochastic evolution
        HV_LAMBDA: Hidden-variable sampler statistics
        PILOT_WAVE: Guided trajectories and equivariance
        MEASURE: Impulsive pointer measurement
        ORDERING_REPORT: Operator-ordering gap report
    """

    EVOLVE_CLASSICAL = "evolve-classical"
    EVOLVE_QUANTUM = "evolve-quantum"
    EVOLVE_MADELUNG = "evolve-madelung"
    HV_BRANCHES = "hv-branches"
    HV_FLIP = "hv-flip"
    HV_LAMBDA = "hv-lambda"
    PILOT_WAVE = "pilot-wave"
    MEASURE = "measure"
    ORDERING_REPORT = "ordering-report"


class MeasurementKind(str, Enum):
    """Observable coupled to the pointer.

    Attributes:
        MOMENTUM: g p1 p2
        POSITION: g q1 p2
        ANGULAR_Z: g Lz1 p2
        LINEAR_OBSERVABLE: g B(q1) p1 p2
    """

    MOMENTUM = "momentum"
    POSITION = "position"
    ANGULAR_Z = "angular-z"
    LINEAR_OBSERVABLE = "linear-observable"


class LambdaKind(str, Enum):
    """Hidden-variable distributions.

    Attributes:
        TWO_POINT: +hbar or -hbar with equal probability
        BALL_SURFACE: Sign of a uniform point on the sphere of radius hbar
        GENERALIZED_TWO_POINT: +a with probability w, -a otherwise
    """

    TWO_POINT = "two-point"
    BALL_SURFACE = "ball-surface"
    GENERALIZED_TWO_POINT = "generalized-two-point"


class EvolutionMode(str, Enum):
    """How the +/- lambda branches share the density.

    Attributes:
        SHARED_RHO: Density advanced with the lambda-averaged right-hand side
        INDEPENDENT_RHO: Each branch transports its own density
    """

    SHARED_RHO = "shared-rho"
    INDEPENDENT_RHO = "independent-rho"


class PropagatorKind(str, Enum):
    """Wavefunction propagators.

    Attributes:
        CRANK_NICOLSON: Generic Cayley step with sparse factorization
        EXACT_SPECTRAL: Diagonal phase in the eigenbasis of a measurement Hamiltonian
    """

    CRANK_NICOLSON = "crank-nicolson"
    EXACT_SPECTRAL = "exact-spectral"


class HamiltonianKind(str, Enum):
    """Catalog of classical Hamiltonians available from configuration files."""

    EM_PARTICLE = "em-particle"
    PDM_QUADRATIC = "pdm-quadratic"
    LINEAR_DRIFT = "linear-drift"
    MOMENTUM_POWER = "momentum-power"
    MEASURE_MOMENTUM = "measure-momentum"
    MEASURE_POSITION = "measure-position"
    MEASURE_ANGULAR_Z = "measure-angular-z"
    MEASURE_LINEAR_OBSERVABLE = "measure-linear-observable"
    SUM = "sum"


# ============================================================================
# Type Aliases
# ============================================================================

PerModeMethod = Literal["eigen", "cn"]

# Metrics that pass when the measured value is at least the threshold
LOWER_BOUND_METRICS = frozenset(
    {"separation_ratio", "uncertainty_ratio", "antithetic_order", "equivariance_scaling"}
)


# ============================================================================
# Pydantic Models - configuration sections
# ============================================================================


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AxisSpec(_Section):
    """One grid axis.

    Attributes:
        n: Number of points (at least 8)
        lower: Lower bound
        upper: Upper bound
        boundary: 'periodic' or 'dirichlet'
    """

    n: int = Field(ge=8)
    lower: float
    upper: float
    boundary: BoundaryKind = BoundaryKind.DIRICHLET

    @model_validator(mode="after")
    def _ordered(self) -> "AxisSpec":
        if not self.upper > self.lower:
            raise ValueError(f"upper ({self.upper}) must exceed lower ({self.lower})")
        return self


class HamiltonianSpec(_Section):
    """Classical Hamiltonian selected from the catalog.

    Polynomials are coefficient lists c0 + c1 q + c2 q**2 + ...; the scalar and
    vector potentials are applied per axis in the axis' own coordinate.

    Attributes:
        kind: Catalog entry
        mass: Particle mass (em-particle)
        charge: Particle charge e (em-particle)
        c_light: Speed of light c (em-particle)
        potential: Polynomial for V(q), summed over axes
        vector_potential: One polynomial per axis for A_k(q_k)
        b: Polynomial for B(q)
        power: Momentum power n for momentum-power
        g: Measurement coupling
        system_axis: Axis of the measured coordinate
        pointer_axis: Axis of the apparatus coordinate
        terms: Members of a sum Hamiltonian
    """

    kind: HamiltonianKind
    mass: float = Field(default=1.0, gt=0)
    charge: float = 1.0
    c_light: float = Field(default=1.0, gt=0)
    potential: list[float] | None = None
    vector_potential: list[list[float]] | None = None
    b: list[float] | None = None
    power: int = Field(default=2, ge=1)
    g: float = 1.0
    system_axis: int = Field(default=0, ge=0)
    pointer_axis: int = Field(default=1, ge=0)
    terms: list["SumTerm"] | None = None

    @model_validator(mode="after")
    def _complete(self) -> "HamiltonianSpec":
        needs_b = {
            HamiltonianKind.PDM_QUADRATIC,
            HamiltonianKind.LINEAR_DRIFT,
            HamiltonianKind.MOMENTUM_POWER,
            HamiltonianKind.MEASURE_LINEAR_OBSERVABLE,
        }
        if self.kind in needs_b and not self.b:
            raise ValueError(f"'{self.kind.value}' requires polynomial 'b'")
        if self.kind is HamiltonianKind.SUM and not self.terms:
            raise ValueError("'sum' requires a non-empty 'terms' list")
        return self


class SumTerm(_Section):
    """Weighted member of a sum Hamiltonian."""

    coefficient: float
    hamiltonian: HamiltonianSpec


HamiltonianSpec.model_rebuild()


class PacketSpec(_Section):
    """Gaussian packet, product over axes.

    ``width`` is the standard deviation of |psi|**2 along each axis.

    Attributes:
        amplitude: Modulus of the superposition coefficient
        phase: Argument of the superposition coefficient
        center: Packet center per axis
        width: Density standard deviation per axis
        wavenumber: Carrier wavenumber per axis
    """

    amplitude: float = 1.0
    phase: float = 0.0
    center: list[float]
    width: list[float]
    wavenumber: list[float] | None = None

    @model_validator(mode="after")
    def _consistent(self) -> "PacketSpec":
        if len(self.width) != len(self.center):
            raise ValueError("'width' and 'center' must have the same length")
        if self.wavenumber is not None and len(self.wavenumber) != len(self.center):
            raise ValueError("'wavenumber' and 'center' must have the same length")
        if any(w <= 0 for w in self.width):
            raise ValueError("packet widths must be positive")
        return self


class StateSpec(_Section):
    """Initial wavefunction as a normalized superposition of packets."""

    packets: list[PacketSpec] = Field(min_length=1)


class TimeSpec(_Section):
    """Time stepping.

    Attributes:
        dt: Step size
        steps: Number of steps
        output_every: Steps between recorded outputs
    """

    dt: float = Field(gt=0)
    steps: int = Field(ge=1)
    output_every: int = Field(default=1, ge=1)


class LambdaSpec(_Section):
    """Hidden-variable distribution.

    Attributes:
        kind: Distribution family
        value: Magnitude a for generalized-two-point (defaults to hbar)
        weight: Probability of +a for generalized-two-point
    """

    kind: LambdaKind = LambdaKind.TWO_POINT
    value: float | None = None
    weight: float = Field(default=0.5, gt=0, lt=1)


class QuantumSection(_Section):
    """Options for evolve-quantum."""

    propagator: PropagatorKind = PropagatorKind.CRANK_NICOLSON


class MadelungSection(_Section):
    """Options for evolve-madelung.

    Attributes:
        quantum_term: Include the -(hbar**2/2m) d2R/R term
        compare_schroedinger: Also propagate the wavefunction and compare
        schroedinger_dt: Crank-Nicolson step for the comparison (default: time.dt)
    """

    quantum_term: bool = True
    compare_schroedinger: bool = True
    schroedinger_dt: float | None = Field(default=None, gt=0)


class HVSection(_Section):
    """Options for hv-branches, hv-flip and hv-lambda.

    Attributes:
        mode: Density-sharing mode for branch pairs
        distribution: Hidden-variable law
        n_micro: Micro-steps per macro step (hv-flip); a list runs a convergence study
        replicas: Monte-Carlo flip replicas
        antithetic: Pair +hbar/-hbar micro-steps
        draws: Sampler draws (hv-lambda)
    """

    mode: EvolutionMode = EvolutionMode.SHARED_RHO
    distribution: LambdaSpec = Field(default_factory=LambdaSpec)
    n_micro: list[int] = Field(default_factory=lambda: [4, 16, 64])
    replicas: int = Field(default=32, ge=1)
    antithetic: bool = False
    draws: int = Field(default=10_000, ge=1)


class PilotSection(_Section):
    """Options for pilot-wave.

    Attributes:
        particles: Number of guided particles
        substeps: RK4 substeps between snapshots
        coarsen: Histogram bin width in grid spacings
    """

    particles: int = Field(default=10_000, ge=1)
    substeps: int = Field(default=4, ge=1)
    coarsen: int = Field(default=1, ge=1)


class OrderingSection(_Section):
    """Options for ordering-report.

    Attributes:
        b: Polynomial B(q)
        test_width: Width of the Gaussian test field (default: a quarter of the domain)
        interior_margin: Points excluded at each edge when checking
    """

    b: list[float]
    test_width: float | None = Field(default=None, gt=0)
    interior_margin: int = Field(default=8, ge=0)


class SystemComponent(_Section):
    """One term c_n psi_n of the system preparation.

    Attributes:
        amplitude: |c_n|
        phase: arg(c_n)
        eigenvalue: a_n in action units (momentum, linear-observable, angular-z)
            or the packet center (position)
    """

    amplitude: float = Field(ge=0)
    phase: float = 0.0
    eigenvalue: float


class PointerSpec(_Section):
    """Apparatus packet and axis.

    Attributes:
        center: Initial pointer center
        width: Density standard deviation of the pointer packet
        axis: Pointer grid axis
    """

    center: float = 0.0
    width: float = Field(gt=0)
    axis: AxisSpec


class ChainStage(_Section):
    """Additional apparatus measuring the previous pointer."""

    g: float
    duration: float = Field(gt=0)
    pointer: PointerSpec


class MeasurementConfig(_Section):
    """Impulsive measurement experiment.

    Attributes:
        kind: Measured observable
        g: Coupling constant
        duration: Interaction span T
        hbar: Reduced Planck constant
        system: Superposition of system eigen-packets
        system_width: Window (momentum, linear-observable), packet width (position)
            or radial scale (angular-z)
        system_axes: Grid axes for the system (2 for angular-z, 1 otherwise)
        pointer: Apparatus packet and axis
        b: Polynomial B(q1) for linear-observable
        n_trajectories: Guided trajectories
        seed: RNG seed
        n_snapshots: Stored wavefunction snapshots over [0, T]
        substeps: RK4 substeps per snapshot interval
        method: Per-mode propagation for linear-observable
        cn_steps: Crank-Nicolson steps when method is 'cn'
        chain: Extra position-measurement stages
    """

    kind: MeasurementKind
    g: float
    duration: float = Field(gt=0)
    hbar: float = Field(default=DEFAULT_HBAR, gt=0)
    system: list[SystemComponent] = Field(min_length=1)
    system_width: float = Field(gt=0)
    system_axes: list[AxisSpec] = Field(min_length=1, max_length=2)
    pointer: PointerSpec
    b: list[float] | None = None
    n_trajectories: int = Field(default=10_000, ge=1)
    seed: int = 0
    n_snapshots: int = Field(default=40, ge=2)
    substeps: int = Field(default=4, ge=1)
    method: PerModeMethod = "eigen"
    cn_steps: int = Field(default=200, ge=1)
    chain: list[ChainStage] = Field(default_factory=list)

    @field_validator("g")
    @classmethod
    def validate_coupling(cls, v: float) -> float:
        """Reject a vanishing coupling.

        Args:
            v: Coupling constant

        Returns:
            The coupling unchanged
        """
        if v == 0:
            raise ValueError("coupling g must be non-zero")
        return v

    @model_validator(mode="after")
    def _normalized(self) -> "MeasurementConfig":
        total = sum(c.amplitude**2 for c in self.system)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(
                f"section 'system': sum of |c_n|^2 is {total:.12g}, expected 1"
            )
        expected_axes = 2 if self.kind is MeasurementKind.ANGULAR_Z else 1
        if len(self.system_axes) != expected_axes:
            raise ValueError(
                f"'{self.kind.value}' needs {expected_axes} system axis/axes"
            )
        if self.kind is MeasurementKind.LINEAR_OBSERVABLE and not self.b:
            raise ValueError("'linear-observable' requires polynomial 'b'")
        if self.chain and self.kind is not MeasurementKind.POSITION:
            raise ValueError("'chain' stages are only defined for position measurements")
        return self


class ScenarioConfig(_Section):
    """Complete scenario description.

    Attributes:
        kind: Scenario kind
        description: Free text echoed into the manifest
        hbar: Reduced Planck constant
        seed: RNG seed
        grid: Grid axes
        hamiltonian: Classical Hamiltonian
        initial: Initial wavefunction (or Madelung data via |psi|**2, hbar arg psi)
        time: Time stepping
        output_dir: Output directory (default: HVQUANT_OUT/<scenario name>)
        checks: Metric thresholds evaluated at the end of the run
    """

    kind: ScenarioKind
    description: str = ""
    hbar: float = Field(default=DEFAULT_HBAR, gt=0)
    seed: int = 0
    grid: list[AxisSpec] | None = None
    hamiltonian: HamiltonianSpec | None = None
    initial: StateSpec | None = None
    time: TimeSpec | None = None
    output_dir: str | None = None
    checks: dict[str, float] = Field(default_factory=dict)
    quantum: QuantumSection | None = None
    madelung: MadelungSection | None = None
    hv: HVSection | None = None
    pilot: PilotSection | None = None
    measurement: MeasurementConfig | None = None
    ordering: OrderingSection | None = None

    @model_validator(mode="after")
    def _sections_present(self) -> "ScenarioConfig":
        required: dict[ScenarioKind, tuple[str, ...]] = {
            ScenarioKind.EVOLVE_CLASSICAL: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.EVOLVE_QUANTUM: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.EVOLVE_MADELUNG: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.HV_BRANCHES: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.HV_FLIP: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.HV_LAMBDA: (),
            ScenarioKind.PILOT_WAVE: ("grid", "hamiltonian", "initial", "time"),
            ScenarioKind.MEASURE: ("measurement",),
            ScenarioKind.ORDERING_REPORT: ("grid", "ordering"),
        }
        missing = [name for name in required[self.kind] if getattr(self, name) is None]
        if missing:
            raise ValueError(
                f"scenario '{self.kind.value}' is missing section(s): {', '.join(missing)}"
            )
        if self.grid is not None and self.initial is not None:
            rank = len(self.grid)
            for i, packet in enumerate(self.initial.packets):
                if len(packet.center) != rank:
                    raise ValueError(
                        f"section 'initial': packet {i} has {len(packet.center)} "
                        f"coordinates, grid rank is {rank}"
                    )
        return self


# ============================================================================
# Pydantic Models - run outputs
# ============================================================================


class CheckResult(BaseModel):
    """Outcome of one declared check.

    Attributes:
        name: Metric name
        value: Measured value
        threshold: Declared threshold
        passed: Whether the check passed
    """

    name: str
    value: float | None
    threshold: float
    passed: bool


class OutputFile(BaseModel):
    """Emitted file with its checksum."""

    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """Record tying every emitted file to its configuration.

    Attributes:
        config: Canonical configuration echo
        code_version: hvquant version
        wall_time: Wall-clock seconds
        status: 'pass', 'fail' or 'error'
        checks: Per-check results
        metrics: Every metric the scenario measured
        files: Output file index
        error: Error message when the scenario raised
        warnings: Non-fatal diagnostics
    """

    config: dict[str, Any]
    code_version: str
    wall_time: float
    status: Literal["pass", "fail", "error"]
    checks: list[CheckResult] = Field(default_factory=list)
    metrics: dict[str, float] = Field(default_factory=dict)
    files: list[OutputFile] = Field(default_factory=list)
    error: str | None = None
    warnings: list[str] = Field(default_factory=list)
