"""Impulsive measurement experiments.

A system superposition sum_n c_n psi_n(q1) is coupled to a pointer packet
phi(q2) by one of the measurement Hamiltonians, with the free Hamiltonians
dropped over the interaction span [0, T]. The entangled state is propagated
exactly (or per pointer-Fourier mode for B(q1) p1), particles seeded from
|Psi(0)|**2 are guided through the snapshots, and each particle is assigned
the outcome whose shifted pointer support contains its final pointer
coordinate.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from .classical import (
    TrajectorySet,
    characteristic_transport,
    classical_pointer_readout,
    integrate_trajectories,
    momentum_characteristics,
    point_velocity,
)
from .config import (
    MAX_CHAIN_STAGES,
    OVERLAP_RATIO,
    SUPPORT_WIDTHS,
    UNRESOLVED_WARNING_FRACTION,
)
from .exceptions import UnresolvableOutcomesError, UsageError
from .fields import Axis, ComplexField, Grid, RealField
from .models import AxisSpec, MeasurementConfig, MeasurementKind
from .pilot import SnapshotSeries, guide, phase_gradient, seed_ensemble
from .quantizer import (
    LinearDrift,
    MeasureAngularZ,
    MeasureLinearObservable,
    MeasureMomentum,
    MeasurePosition,
    Profile,
    QuantumOperator,
    quantize,
)
from .quantum import AngularSpectral, CrankNicolson, exact_propagator, normalize

logger = logging.getLogger(__name__)

Amplitude = Callable[[tuple[np.ndarray, ...]], np.ndarray]
MeasurementHamiltonian = (
    MeasureMomentum | MeasurePosition | MeasureAngularZ | MeasureLinearObservable
)


def _axis(spec: AxisSpec) -> Axis:
    return Axis(spec.n, spec.lower, spec.upper, spec.boundary)


def _pointer_amplitude(q: np.ndarray, center: float, width: float) -> np.ndarray:
    return (2.0 * np.pi * width**2) ** -0.25 * np.exp(-((q - center) ** 2) / (4.0 * width**2))


# ============================================================================
# Outcome statistics
# ============================================================================


@dataclass(frozen=True, eq=False)
class OutcomeHistogram:
    """Classified pointer outcomes.

    Attributes:
        eigenvalues: Outcome values a_n, ascending
        expected: Born weights |c_n|**2 in the same order
        counts: Trajectories per outcome
        unresolved: Trajectories outside every pointer support
    """

    eigenvalues: np.ndarray
    expected: np.ndarray
    counts: np.ndarray
    unresolved: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.unresolved

    @property
    def resolved(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        if self.resolved == 0:
            return np.zeros_like(self.expected)
        return self.counts / self.resolved

    @property
    def standard_errors(self) -> np.ndarray:
        p = self.probabilities
        return np.sqrt(p * (1.0 - p) / max(self.resolved, 1))

    @property
    def unresolved_fraction(self) -> float:
        return self.unresolved / self.total if self.total else 0.0

    def born_deviation(self) -> float:
        """Largest |frequency - |c_n|**2| over outcomes."""
        return float(np.max(np.abs(self.probabilities - self.expected)))

    def within_born_bound(self, sigmas: float = 3.0) -> bool:
        """Whether every frequency lies within sigmas binomial standard deviations."""
        bound = sigmas * np.sqrt(self.expected * (1.0 - self.expected) / max(self.resolved, 1))
        return bool(np.all(np.abs(self.probabilities - self.expected) <= bound))

    def to_frame(self) -> pd.DataFrame:
        """Results table: outcome, count, frequency, |c_n|^2, standard error."""
        return pd.DataFrame(
            {
                "outcome": self.eigenvalues,
                "count": self.counts,
                "frequency": self.probabilities,
                "expected": self.expected,
                "standard_error": self.standard_errors,
            }
        )


# ============================================================================
# Preparation
# ============================================================================


@dataclass(frozen=True, eq=False)
class PreparedState:
    """Initial product state and its outcome bookkeeping.

    Attributes:
        grid: System axes followed by the pointer axis
        psi: Normalized samples of Psi(0)
        amplitude: Analytic Psi(0) on arbitrary mesh coordinates (same normalization)
        eigenvalues: a_n per component, in configuration order
        weights: |c_n|**2 per component
        spreads: Outcome spread of each eigen-packet
    """

    grid: Grid
    psi: ComplexField
    amplitude: Amplitude
    eigenvalues: np.ndarray
    weights: np.ndarray
    spreads: np.ndarray

    @property
    def pointer_axis(self) -> int:
        return self.grid.rank - 1


def measurement_hamiltonian(cfg: MeasurementConfig) -> MeasurementHamiltonian:
    """Interaction Hamiltonian for the configured kind."""
    if cfg.kind is MeasurementKind.MOMENTUM:
        return MeasureMomentum(cfg.g, 0, 1)
    if cfg.kind is MeasurementKind.POSITION:
        return MeasurePosition(cfg.g, 0, 1)
    if cfg.kind is MeasurementKind.ANGULAR_Z:
        return MeasureAngularZ(cfg.g, 0, 1, 2)
    return MeasureLinearObservable(cfg.g, Profile.polynomial(cfg.b or [1.0], label="B(q1)"), 0, 1)


def _observable_matrix(cfg: MeasurementConfig, hbar: float) -> tuple[Grid, np.ndarray]:
    """Dense (B p1 + p1 B)/2 on the system axis."""
    system = Grid((_axis(cfg.system_axes[0]),))
    b = Profile.polynomial(cfg.b or [1.0], label="B(q1)")
    return system, quantize(LinearDrift(b, 0), system, hbar).matrix.toarray()


def _system_factor(cfg: MeasurementConfig, hbar: float) -> tuple[Callable, np.ndarray]:
    """Unnormalized system amplitude f(system coords) and per-component spreads."""
    width = cfg.system_width
    comps = [(c.amplitude * np.exp(1j * c.phase), c.eigenvalue) for c in cfg.system]

    if cfg.kind is MeasurementKind.MOMENTUM:

        def momentum(x: np.ndarray) -> np.ndarray:
            window = np.exp(-(x**2) / (4.0 * width**2))
            return sum(c * window * np.exp(1j * a * x / hbar) for c, a in comps)

        return (lambda coords: momentum(coords[0])), np.full(len(comps), hbar / (2.0 * width))

    if cfg.kind is MeasurementKind.POSITION:

        def position(x: np.ndarray) -> np.ndarray:
            return sum(c * np.exp(-((x - a) ** 2) / (4.0 * width**2)) for c, a in comps)

        return (lambda coords: position(coords[0])), np.full(len(comps), width)

    if cfg.kind is MeasurementKind.ANGULAR_Z:

        def angular(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            envelope = np.exp(-(x**2 + y**2) / (2.0 * width**2))
            total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
            for c, a in comps:
                m = int(round(a / hbar))
                norm = (math.pi * math.factorial(abs(m)) * width ** (2 * abs(m) + 2)) ** -0.5
                total = total + c * norm * (x + 1j * np.sign(m) * y) ** abs(m) * envelope
            return total

        return (lambda coords: angular(coords[0], coords[1])), np.zeros(len(comps))

    # linear observable: windowed |B|^(-1/2) exp(i a int dq/B / hbar)
    system, a1 = _observable_matrix(cfg, hbar)
    nodes = system.axes[0].coordinates
    b = Profile.polynomial(cfg.b or [1.0])
    b_nodes = b(nodes)
    if np.any(b_nodes == 0) or np.any(np.sign(b_nodes) != np.sign(b_nodes[0])):
        raise UsageError("b", cfg.b, reason="B(q1) must not vanish on the system axis")
    phase_table = cumulative_trapezoid(1.0 / b_nodes, nodes, initial=0.0)

    def packet(x: np.ndarray, a: float) -> np.ndarray:
        window = np.exp(-(x**2) / (4.0 * width**2)) / np.sqrt(np.abs(b(x)))
        return window * np.exp(1j * a * np.interp(x, nodes, phase_table) / hbar)

    spreads = []
    for _, a in comps:
        v = packet(nodes, a)
        v = v / np.linalg.norm(v)
        av = a1 @ v
        mean = float(np.real(np.vdot(v, av)))
        spreads.append(math.sqrt(max(float(np.real(np.vdot(av, av))) - mean**2, 0.0)))

    def linear(x: np.ndarray) -> np.ndarray:
        return sum(c * packet(x, a) for c, a in comps)

    return (lambda coords: linear(coords[0])), np.asarray(spreads)


def prepare_state(cfg: MeasurementConfig) -> PreparedState:
    """Build Psi(0) = (sum_n c_n psi_n) phi(q2) on the measurement grid.

    Momentum eigen-packets are Gaussian-windowed plane waves with window
    ``system_width``; angular eigenstates are (x +- iy)**|m| exp(-r**2/2s**2).
    """
    hbar = cfg.hbar
    grid = Grid(tuple(_axis(spec) for spec in cfg.system_axes) + (_axis(cfg.pointer.axis),))
    system, spreads = _system_factor(cfg, hbar)
    pointer = cfg.pointer

    def raw(coords: tuple[np.ndarray, ...]) -> np.ndarray:
        return system(coords[:-1]) * _pointer_amplitude(coords[-1], pointer.center, pointer.width)

    samples = raw(grid.mesh())
    scale = float(np.linalg.norm(samples)) / float(np.linalg.norm(normalize(samples, grid)))

    def amplitude(coords: tuple[np.ndarray, ...]) -> np.ndarray:
        return raw(coords) / scale

    return PreparedState(
        grid=grid,
        psi=ComplexField(grid, samples / scale),
        amplitude=amplitude,
        eigenvalues=np.array([c.eigenvalue for c in cfg.system]),
        weights=np.array([c.amplitude**2 for c in cfg.system]),
        spreads=spreads,
    )


def pointer_separation_check(cfg: MeasurementConfig) -> float:
    """Smallest |g (a_n - a_m) T| / pointer width over adjacent outcomes.

    A single outcome gives infinity; a degenerate pair gives zero.
    """
    values = np.sort(np.array([c.eigenvalue for c in cfg.system]))
    if values.size < 2:
        return math.inf
    ratio = float(np.min(np.abs(cfg.g * np.diff(values) * cfg.duration)) / cfg.pointer.width)
    if ratio < OVERLAP_RATIO:
        logger.warning(f"Pointer separation ratio {ratio:.4g} is below {OVERLAP_RATIO:g}")
    return ratio


def pointer_density(psi: ComplexField, axis: int = -1) -> RealField:
    """Marginal |Psi|**2 on the pointer axis, integrated over every other axis."""
    grid = psi.grid
    axis = axis % grid.rank
    weights = grid.quadrature_weights()
    others = tuple(k for k in range(grid.rank) if k != axis)
    marginal = np.sum(np.abs(psi.values) ** 2 * weights, axis=others)
    pointer = Grid((grid.axes[axis],))
    return RealField(pointer, marginal / pointer.quadrature_weights())


# ============================================================================
# Propagation
# ============================================================================


class PerModePropagator:
    """Exact or Crank-Nicolson propagation of g B(q1) p1 p2 per pointer mode.

    Fourier transforming the pointer axis leaves, for every wavenumber k2, the
    system operator g hbar k2 A1 with A1 = (B p1 + p1 B)/2. ``method='eigen'``
    diagonalizes A1 once; ``method='cn'`` runs Crank-Nicolson per mode.

    Attributes:
        method: 'eigen' or 'cn'
        cn_steps: Crank-Nicolson steps over a full propagation span
    """

    def __init__(
        self,
        H: MeasureLinearObservable,
        grid: Grid,
        hbar: float,
        method: str = "eigen",
        cn_steps: int = 200,
    ) -> None:
        if (H.system_axis, H.pointer_axis) != (0, 1) or grid.rank != 2:
            raise UsageError("grid", f"rank {grid.rank}", reason="expects axes (q1, pointer)")
        if not grid.axes[1].periodic:
            raise UsageError("grid", "axis 1", reason="per-mode propagation needs a periodic pointer")
        if method not in ("eigen", "cn"):
            raise UsageError("method", method, ["eigen", "cn"])
        self.H, self.grid, self.hbar = H, grid, hbar
        self.method = method
        self.cn_steps = cn_steps
        self.system = Grid((grid.axes[0],))
        self.observable = quantize(LinearDrift(H.b, 0), self.system, hbar)
        self.dense = self.observable.matrix.toarray()
        self.k2 = grid.axes[1].wavenumbers()
        self._eigen: tuple[np.ndarray, np.ndarray] | None = None
        self._cn: dict[int, CrankNicolson] = {}

    def _eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eigen is None:
            self._eigen = linalg.eigh(self.dense)
        return self._eigen

    def _cn_mode(self, j: int) -> CrankNicolson:
        if j not in self._cn:
            op: QuantumOperator = self.observable.scaled(self.H.g * self.hbar * self.k2[j])
            self._cn[j] = CrankNicolson(op, self.hbar)
        return self._cn[j]

    def step(self, psi: ComplexField, dt: float, t: float = 0.0) -> ComplexField:
        spectrum = np.fft.fft(psi.values, axis=1)
        if self.method == "eigen":
            w, v = self._eigenbasis()
            coeff = v.conj().T @ spectrum
            coeff *= np.exp(-1j * self.H.g * np.outer(w, self.k2) * dt)
            spectrum = v @ coeff
        else:
            n_steps = max(1, self.cn_steps)
            h = dt / n_steps
            for j in range(self.k2.size):
                column = ComplexField(self.system, spectrum[:, j])
                cn = self._cn_mode(j)
                for _ in range(n_steps):
                    column = cn.step(column, h)
                spectrum[:, j] = column.values
        return ComplexField(self.grid, np.fft.ifft(spectrum, axis=1))

    def observable_expectation(self, psi: ComplexField) -> float:
        """<A1> with the discrete inner product A1 is Hermitian for."""
        values = psi.values
        return float(np.real(np.vdot(values, self.dense @ values)) / np.real(np.vdot(values, values)))


def _snapshots(
    cfg: MeasurementConfig, prepared: PreparedState, H: MeasurementHamiltonian
) -> tuple[SnapshotSeries, np.ndarray]:
    """Psi at n_snapshots uniform times over [0, T] and <A1> at each."""
    times = np.linspace(0.0, cfg.duration, cfg.n_snapshots)
    psi0 = prepared.psi
    hbar = cfg.hbar

    if isinstance(H, MeasureAngularZ):
        prop = AngularSpectral(H, prepared.grid, hbar)
        modes = prop.decompose_function(lambda x, y, q: prepared.amplitude((x, y, q)))
        states = [psi0] + [prop.reconstruct(modes, t) for t in times[1:]]
        series = [prop.mode_expectation(prop.evolve_modes(modes, t)) for t in times]
        return SnapshotSeries(times, states), np.asarray(series)

    if isinstance(H, MeasureLinearObservable):
        prop = PerModePropagator(H, prepared.grid, hbar, cfg.method, cfg.cn_steps)
        if cfg.method == "cn":
            # march between snapshots; cn_steps covers the whole span
            prop.cn_steps = max(1, -(-cfg.cn_steps // (times.size - 1)))
            states = [psi0]
            for t0, t1 in zip(times[:-1], times[1:], strict=True):
                states.append(prop.step(states[-1], t1 - t0, t0))
        else:
            states = [psi0] + [prop.step(psi0, t) for t in times[1:]]
        series = [prop.observable_expectation(s) for s in states]
        return SnapshotSeries(times, states), np.asarray(series)

    prop = exact_propagator(H, prepared.grid, hbar)
    states = [psi0] + [prop.step(psi0, t) for t in times[1:]]
    series = [prop.observable_expectation(s) for s in states]
    return SnapshotSeries(times, states), np.asarray(series)


# ============================================================================
# Experiments
# ============================================================================


@dataclass(frozen=True, eq=False)
class MeasurementResult:
    """Everything one measurement run produces.

    Attributes:
        config: Experiment configuration
        prepared: Initial state and outcome bookkeeping
        snapshots: Psi over [0, T]
        trajectories: Guided particles at the snapshot times
        readouts: (q2(T) - q2(0)) / (gT) per particle
        histogram: Classified outcomes
        observable: <A1> at the snapshot times
        pointer: Pointer marginal at T
        separation_ratio: Result of pointer_separation_check
        warnings: Resolution warnings raised during the run
    """

    config: MeasurementConfig
    prepared: PreparedState
    snapshots: SnapshotSeries
    trajectories: TrajectorySet
    readouts: np.ndarray
    histogram: OutcomeHistogram
    observable: np.ndarray
    pointer: RealField
    separation_ratio: float
    warnings: list[str] = field(default_factory=list)

    @property
    def observable_drift(self) -> float:
        """max |<A1>(t) - <A1>(0)| relative to max(|<A1>(0)|, hbar)."""
        scale = max(abs(float(self.observable[0])), self.config.hbar)
        return float(np.max(np.abs(self.observable - self.observable[0]))) / scale

    @property
    def initial_system(self) -> np.ndarray:
        return self.trajectories.initial[:, 0]


def classify(
    final_pointer: np.ndarray, centers: np.ndarray, half_widths: np.ndarray
) -> tuple[np.ndarray, int]:
    """Assign each pointer coordinate to the first support containing it."""
    inside = np.abs(final_pointer[:, None] - centers[None, :]) <= half_widths[None, :]
    hit = inside.any(axis=1)
    first = np.argmax(inside, axis=1)
    counts = np.bincount(first[hit], minlength=centers.size)
    return counts, int((~hit).sum())


def run_measurement(cfg: MeasurementConfig) -> MeasurementResult:
    """Prepare, propagate, guide and classify one impulsive measurement.

    Raises:
        UnresolvableOutcomesError: If adjacent pointer packets overlap.
    """
    ratio = pointer_separation_check(cfg)
    if ratio < OVERLAP_RATIO:
        raise UnresolvableOutcomesError(ratio, OVERLAP_RATIO)

    H = measurement_hamiltonian(cfg)
    prepared = prepare_state(cfg)
    grid = prepared.grid
    p_axis = prepared.pointer_axis
    logger.info(
        f"Measuring {cfg.kind.value} on grid {grid.shape}: g={cfg.g:g}, T={cfg.duration:g}, "
        f"{cfg.n_trajectories} trajectories"
    )
    snapshots, observable = _snapshots(cfg, prepared, H)

    rng = np.random.default_rng(cfg.seed)
    seeds = seed_ensemble(prepared.psi, cfg.n_trajectories, rng)
    if isinstance(H, MeasurePosition):
        trajectories = integrate_trajectories(
            point_velocity(H, grid.rank),
            seeds,
            (0.0, cfg.duration),
            (cfg.n_snapshots - 1) * cfg.substeps,
            grid,
            output_every=cfg.substeps,
        )
    else:
        trajectories = guide(snapshots, H, seeds, cfg.substeps, cfg.hbar).trajectories

    order = np.argsort(prepared.eigenvalues, kind="stable")
    values = prepared.eigenvalues[order]
    centers = cfg.pointer.center + cfg.g * values * cfg.duration
    widths = np.hypot(cfg.pointer.width, cfg.g * cfg.duration * prepared.spreads[order])
    counts, unresolved = classify(trajectories.final[:, p_axis], centers, SUPPORT_WIDTHS * widths)
    histogram = OutcomeHistogram(values, prepared.weights[order], counts, unresolved)

    warnings: list[str] = []
    if histogram.unresolved_fraction > UNRESOLVED_WARNING_FRACTION:
        message = (
            f"{histogram.unresolved_fraction:.2%} of trajectories fell outside every "
            f"pointer support"
        )
        logger.warning(message)
        warnings.append(message)
    if trajectories.flagged_fraction > 0:
        warnings.append(f"{trajectories.flagged_fraction:.2%} of trajectories flagged")

    return MeasurementResult(
        config=cfg,
        prepared=prepared,
        snapshots=snapshots,
        trajectories=trajectories,
        readouts=classical_pointer_readout(trajectories, cfg.g, cfg.duration, p_axis),
        histogram=histogram,
        observable=observable,
        pointer=pointer_density(snapshots.states[-1], p_axis),
        separation_ratio=ratio,
        warnings=warnings,
    )


def _wrap_periodic(coords: tuple[np.ndarray, ...], grid: Grid) -> tuple[np.ndarray, ...]:
    return tuple(
        ax.lower + np.mod(q - ax.lower, ax.length) if ax.periodic else q
        for q, ax in zip(coords, grid.axes, strict=True)
    )


def _analytic_phase_gradient(
    amplitude: Amplitude, grid: Grid, hbar: float
) -> Callable[[tuple[np.ndarray, ...]], list[np.ndarray]]:
    """dS0/dq from centered differences of arg(Psi(0)) at arbitrary coordinates."""

    def grad(coords: tuple[np.ndarray, ...]) -> list[np.ndarray]:
        out = []
        for k, ax in enumerate(grid.axes):
            eps = 1e-4 * ax.spacing
            plus = tuple(q + eps if j == k else q for j, q in enumerate(coords))
            minus = tuple(q - eps if j == k else q for j, q in enumerate(coords))
            forward = amplitude(_wrap_periodic(plus, grid))
            backward = amplitude(_wrap_periodic(minus, grid))
            out.append(hbar * np.angle(forward * np.conj(backward)) / (2.0 * eps))
        return out

    return grad


def quantum_vs_classical_position(cfg: MeasurementConfig) -> dict[str, float]:
    """Sup-norm gaps between classical transport and exact quantum evolution.

    Both sides start from the same Psi(0). For a position measurement the
    classical side transports (rho, S) along the characteristics of g q1 p2
    and the two agree. For a momentum measurement it follows the conserved
    momenta of g p1 p2 while the quantum side splits the pointer, so the
    gaps measure how far the classical ensemble is from the quantum one.
    Phase gradients are compared where rho > 1e-8 max rho.

    Returns:
        {"rho": sup |rho_q - rho_c|, "grad_S": sup |dS_q - dS_c|}

    Raises:
        UsageError: If the kind is neither position nor momentum.
    """
    allowed = (MeasurementKind.POSITION, MeasurementKind.MOMENTUM)
    if cfg.kind not in allowed:
        raise UsageError("kind", cfg.kind.value, [k.value for k in allowed])
    H = measurement_hamiltonian(cfg)
    prepared = prepare_state(cfg)
    grid = prepared.grid
    hbar = cfg.hbar
    T = cfg.duration

    psi_q = prepared.psi if T == 0 else exact_propagator(H, grid, hbar).step(prepared.psi, T)

    def rho0(coords: tuple[np.ndarray, ...]) -> np.ndarray:
        return np.abs(prepared.amplitude(_wrap_periodic(coords, grid))) ** 2

    if cfg.kind is MeasurementKind.POSITION:

        def S0(coords: tuple[np.ndarray, ...]) -> np.ndarray:
            return hbar * np.angle(prepared.amplitude(_wrap_periodic(coords, grid)))

        classical = characteristic_transport(H, rho0, S0, grid, T)
        rho_c = classical.rho.values
        psi_c = ComplexField(
            grid, np.sqrt(np.clip(rho_c, 0.0, None)) * np.exp(1j * classical.S.values / hbar)
        )
        grad_c, _ = phase_gradient(psi_c, hbar)
    else:
        rho_field, grad_fields = momentum_characteristics(
            H, rho0, _analytic_phase_gradient(prepared.amplitude, grid, hbar), grid, T
        )
        rho_c = rho_field.values
        grad_c = [g.values for g in grad_fields]

    rho_q = np.abs(psi_q.values) ** 2
    rho_gap = float(np.max(np.abs(rho_q - rho_c)))

    grad_q, _ = phase_gradient(psi_q, hbar)
    mask = rho_q > 1e-8 * float(rho_q.max())
    grad_gap = max(float(np.max(np.abs(gq - gc)[mask])) for gq, gc in zip(grad_q, grad_c, strict=True))
    logger.info(
        f"{cfg.kind.value.capitalize()} classicality: rho gap {rho_gap:.3e}, grad S gap {grad_gap:.3e}"
    )
    return {"rho": rho_gap, "grad_S": grad_gap}


@dataclass(frozen=True, eq=False)
class ChainResult:
    """Chained position measurements.

    Attributes:
        initial_system: q1(0) per particle
        readouts: Stage-j readout per particle, shape (n, k)
        pointer_finals: Stage-j pointer coordinate after its stage, shape (n, k)
    """

    initial_system: np.ndarray
    readouts: np.ndarray
    pointer_finals: np.ndarray

    @property
    def stages(self) -> int:
        return self.readouts.shape[1]

    def agreement(self) -> np.ndarray:
        """Per stage, max |readout_j - quantity it measured|.

        Stage 0 measured q1(0); stage j measured the stage j-1 pointer.
        """
        measured = np.column_stack([self.initial_system, self.pointer_finals[:, :-1]])
        return np.max(np.abs(self.readouts - measured), axis=0)


def repeated_pointer_measurement(
    cfg: MeasurementConfig, stages: int | None = None
) -> ChainResult:
    """Chain position measurements: stage j's pointer is stage j+1's system.

    Stage 0 uses the main coupling and pointer, later stages the ``chain``
    entries. Each stage couples only its own pair of axes, so the guided
    velocity is known pointwise and the initial product state is sampled
    factor by factor.

    Raises:
        UsageError: If the kind is not position, or stages exceeds the
            configured chain or MAX_CHAIN_STAGES.
    """
    if cfg.kind is not MeasurementKind.POSITION:
        raise UsageError("kind", cfg.kind.value, [MeasurementKind.POSITION.value])
    k = stages if stages is not None else 1 + len(cfg.chain)
    if not 1 <= k <= min(MAX_CHAIN_STAGES, 1 + len(cfg.chain)):
        raise UsageError(
            "stages", k, reason=f"need 1 <= k <= {min(MAX_CHAIN_STAGES, 1 + len(cfg.chain))}"
        )
    plan = [(cfg.g, cfg.duration, cfg.pointer)] + [
        (s.g, s.duration, s.pointer) for s in cfg.chain[: k - 1]
    ]
    grid = Grid(
        (_axis(cfg.system_axes[0]),) + tuple(_axis(pointer.axis) for _, _, pointer in plan)
    )

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_trajectories
    system, _ = _system_factor(cfg, cfg.hbar)
    system_grid = Grid((grid.axes[0],))
    columns = [
        seed_ensemble(ComplexField(system_grid, system(system_grid.mesh())), n, rng)[:, 0]
    ]
    for j, (_, _, pointer) in enumerate(plan, start=1):
        axis_grid = Grid((grid.axes[j],))
        amp = _pointer_amplitude(axis_grid.coordinates(0), pointer.center, pointer.width)
        columns.append(seed_ensemble(ComplexField(axis_grid, amp.astype(complex)), n, rng)[:, 0])
    positions = np.column_stack(columns)

    readouts, finals = [], []
    t = 0.0
    for j, (g, duration, _) in enumerate(plan):
        H = MeasurePosition(g, system_axis=j, pointer_axis=j + 1)
        traj = integrate_trajectories(
            point_velocity(H, grid.rank),
            positions,
            (t, t + duration),
            (cfg.n_snapshots - 1) * cfg.substeps,
            grid,
            output_every=cfg.substeps,
        )
        readouts.append(classical_pointer_readout(traj, g, duration, pointer_axis=j + 1))
        finals.append(traj.final[:, j + 1])
        positions = traj.final
        t += duration
    return ChainResult(columns[0], np.column_stack(readouts), np.column_stack(finals))


def linear_observable_oracle(cfg: MeasurementConfig) -> float:
    """Max |Psi_modes(T) - expm(-i H T / hbar) Psi(0)| on the measurement grid.

    The dense oracle uses the same discrete A1 on q1 and the spectral p2,
    so the two agree up to the per-mode integration error.

    Raises:
        UsageError: If the kind is not linear-observable.
    """
    if cfg.kind is not MeasurementKind.LINEAR_OBSERVABLE:
        raise UsageError("kind", cfg.kind.value, [MeasurementKind.LINEAR_OBSERVABLE.value])
    H = measurement_hamiltonian(cfg)
    prepared = prepare_state(cfg)
    grid = prepared.grid
    hbar = cfg.hbar
    prop = PerModePropagator(H, grid, hbar, cfg.method, cfg.cn_steps)
    by_modes = prop.step(prepared.psi, cfg.duration).values.ravel()

    n2 = grid.axes[1].n
    k2 = grid.axes[1].wavenumbers()
    p2 = hbar * np.fft.ifft(k2[:, None] * np.fft.fft(np.eye(n2), axis=0), axis=0)
    full = cfg.g * np.kron(prop.dense, p2)
    oracle = linalg.expm(-1j * full * cfg.duration / hbar) @ prepared.psi.values.ravel()
    gap = float(np.max(np.abs(by_modes - oracle)))
    logger.info(f"Per-mode vs dense exponential ({cfg.method}): {gap:.3e}")
    return gap
