"""Scenario orchestration.

This module parses scenario files, builds grids, Hamiltonians and initial
states from them, dispatches each scenario kind to its handler, evaluates
the declared checks and writes outputs plus a manifest.
"""

import json
import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import __version__
from .classical import ClassicalEnsembleState, evolve
from .config import DEFAULT_OUTPUT_ROOT
from .exceptions import (
    CausticError,
    ConfigError,
    HVQuantError,
    NodeError,
    PositivityError,
    StabilityError,
    UnresolvableOutcomesError,
    UnsupportedHamiltonianError,
)
from .fields import Axis, ComplexField, Field, Grid, RealField, derivative, dump_field, integrate
from .hidden import (
    BranchState,
    LambdaDistribution,
    antithetic_pair,
    average_branches,
    branch_rhs,
    check_phase_symmetry,
    evolve_branches,
    flip_ensemble,
    fluctuation_identity_residual,
    sample_lambdas,
)
from .measurement import (
    MeasurementResult,
    linear_observable_oracle,
    quantum_vs_classical_position,
    repeated_pointer_measurement,
    run_measurement,
)
from .models import (
    LOWER_BOUND_METRICS,
    AxisSpec,
    CheckResult,
    EvolutionMode,
    HamiltonianKind,
    LambdaKind,
    HamiltonianSpec,
    MeasurementKind,
    OutputFile,
    PropagatorKind,
    RunManifest,
    ScenarioConfig,
    ScenarioKind,
)
from .pilot import (
    SnapshotSeries,
    equivariance_scaling,
    equivariance_test,
    guide,
    phase_gradient,
    seed_ensemble,
)
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
    Profile,
    Sum,
    ordering_gap,
    quantize,
    velocity_functional,
)
from .quantum import (
    CrankNicolson,
    MadelungState,
    energy,
    evolve_madelung,
    exact_propagator,
    free_gaussian_width,
    gaussian_packet,
    madelung_rhs,
    normalize,
    observables,
    propagate,
    to_madelung,
)
from .utils import (
    atomic_write_json,
    config_digest,
    file_sha256,
    profile_frame,
    trajectory_frame,
    write_csv,
)

logger = logging.getLogger(__name__)

SENTINEL = "RUNNING"
MANIFEST = "manifest.json"


@dataclass
class ScenarioOutput:
    """What a scenario handler hands back to the runner.

    Attributes:
        metrics: Named scalar results, matched against the declared checks
        tables: CSV tables by file stem
        fields: Field snapshots by file stem
        warnings: Non-fatal diagnostics
    """

    metrics: dict[str, float] = field(default_factory=dict)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    fields: dict[str, Field] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


# ============================================================================
# Configuration
# ============================================================================


def _format_error(err: dict) -> str:
    loc = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
    return f"{loc}: {err.get('msg', 'invalid')}"


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario document.

    Args:
        text: JSON text

    Returns:
        Fully validated configuration.

    Raises:
        ConfigError: With every problem found, not just the first.
    """
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}, column {e.colno}: {e.msg}"]) from e
    try:
        return ScenarioConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError([_format_error(err) for err in e.errors()]) from e


def load_config(path: str | Path) -> ScenarioConfig:
    """Read and parse a scenario file."""
    return parse_config(Path(path).read_text())


def canonical_form(cfg: ScenarioConfig) -> str:
    """Sorted-key JSON of every field, defaults included; parses back to an equal config."""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def build_grid(specs: list[AxisSpec]) -> Grid:
    """Grid from axis sections."""
    return Grid(tuple(Axis(s.n, s.lower, s.upper, s.boundary) for s in specs))


def build_hamiltonian(spec: HamiltonianSpec) -> ClassicalHamiltonian:
    """Catalog Hamiltonian from its configuration section.

    Single-axis kinds (pdm-quadratic, linear-drift, momentum-power) act on
    ``system_axis``.

    Raises:
        UnsupportedHamiltonianError: If the kind is unknown.
    """
    kind = spec.kind
    b = Profile.polynomial(spec.b) if spec.b else None
    if kind is HamiltonianKind.EM_PARTICLE:
        return EmParticle.from_polynomials(
            spec.mass, spec.charge, spec.c_light, spec.potential, spec.vector_potential
        )
    if kind is HamiltonianKind.PDM_QUADRATIC:
        return PdmQuadratic(b, spec.system_axis)
    if kind is HamiltonianKind.LINEAR_DRIFT:
        return LinearDrift(b, spec.system_axis)
    if kind is HamiltonianKind.MOMENTUM_POWER:
        return MomentumPower(b, spec.power, spec.system_axis)
    if kind is HamiltonianKind.MEASURE_MOMENTUM:
        return MeasureMomentum(spec.g, spec.system_axis, spec.pointer_axis)
    if kind is HamiltonianKind.MEASURE_POSITION:
        return MeasurePosition(spec.g, spec.system_axis, spec.pointer_axis)
    if kind is HamiltonianKind.MEASURE_ANGULAR_Z:
        return MeasureAngularZ(spec.g, 0, 1, spec.pointer_axis)
    if kind is HamiltonianKind.MEASURE_LINEAR_OBSERVABLE:
        return MeasureLinearObservable(spec.g, b, spec.system_axis, spec.pointer_axis)
    if kind is HamiltonianKind.SUM:
        return Sum(tuple((t.coefficient, build_hamiltonian(t.hamiltonian)) for t in spec.terms))
    raise UnsupportedHamiltonianError(str(kind), "not in the catalog")


def build_initial(cfg: ScenarioConfig, grid: Grid) -> ComplexField:
    """Normalized superposition of the configured Gaussian packets."""
    psi = np.zeros(grid.shape, dtype=complex)
    for packet in cfg.initial.packets:
        coefficient = packet.amplitude * np.exp(1j * packet.phase)
        psi = psi + coefficient * gaussian_packet(
            grid, packet.center, packet.width, packet.wavenumber
        )
    return ComplexField(grid, normalize(psi, grid))


@dataclass(frozen=True)
class _Setup:
    grid: Grid
    H: ClassicalHamiltonian
    psi0: ComplexField


def _setup(cfg: ScenarioConfig) -> _Setup:
    grid = build_grid(cfg.grid)
    return _Setup(grid, build_hamiltonian(cfg.hamiltonian), build_initial(cfg, grid))


def _l2(values: np.ndarray, grid: Grid, weight: np.ndarray | None = None) -> float:
    integrand = values**2 if weight is None else weight * values**2
    return float(np.sqrt(integrate(RealField(grid, integrand))))


# ============================================================================
# Scenario handlers
# ============================================================================


def _ordering_report(cfg: ScenarioConfig) -> ScenarioOutput:
    grid = build_grid(cfg.grid)
    section = cfg.ordering
    b = Profile.polynomial(section.b, label="B(q)")
    gap = ordering_gap(b, grid, cfg.hbar, section.test_width)
    margin = section.interior_margin
    interior = gap.values[margin : grid.shape[0] - margin]
    hbar2 = cfg.hbar**2
    op = quantize(PdmQuadratic(b, 0), grid, cfg.hbar)
    logger.info(f"Ordering report for {op.descriptor}: mean gap {interior.mean():.12g}")
    return ScenarioOutput(
        metrics={
            "ordering_gap_mean": float(interior.mean()),
            "ordering_gap_rel_error": float(np.max(np.abs(interior - hbar2)) / hbar2),
            "hermitian": float(op.hermitian),
        },
        tables={"ordering_gap": profile_frame(gap, "gap")},
    )


def _is_free(H: ClassicalHamiltonian) -> bool:
    return (
        isinstance(H, EmParticle)
        and H.scalar_potential is None
        and H.vector_potential is None
    )


def _evolve_quantum(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    op = quantize(s.H, s.grid, hbar)
    section = cfg.quantum
    if section is not None and section.propagator is PropagatorKind.EXACT_SPECTRAL:
        prop = exact_propagator(s.H, s.grid, hbar)
    else:
        prop = CrankNicolson(op, hbar)

    psi, t = s.psi0, 0.0
    rows = [observables(psi, op, t, hbar)]
    for step in range(1, ts.steps + 1):
        psi = propagate(prop, psi, ts.dt, t)
        t = step * ts.dt
        if step % ts.output_every == 0 or step == ts.steps:
            rows.append(observables(psi, op, t, hbar))
    series = pd.DataFrame(rows)
    series["product"] = series["sigma_q"] * series["sigma_p"]

    e0 = float(series["energy"].iloc[0])
    metrics = {
        "norm_drift": float(np.max(np.abs(series["norm"] - series["norm"].iloc[0]))),
        "energy_drift": float(np.max(np.abs(series["energy"] - e0)) / max(abs(e0), 1e-300)),
        "uncertainty_ratio": float(series["product"].min() / (0.5 * hbar)),
        "min_uncertainty_error": float(abs(series["product"].iloc[0] / (0.5 * hbar) - 1.0)),
    }
    packets = cfg.initial.packets
    if _is_free(s.H) and len(packets) == 1:
        sigma0 = packets[0].width[0]
        analytic = np.array(
            [free_gaussian_width(sigma0, t, s.H.mass, hbar) for t in series["t"]]
        )
        series["sigma_analytic"] = analytic
        metrics["dispersion_error"] = float(np.max(np.abs(series["sigma_q"] / analytic - 1.0)))
    logger.info(f"Quantum evolution: {ts.steps} steps, norm drift {metrics['norm_drift']:.3e}")
    return ScenarioOutput(metrics, {"observables": series}, {"psi_final": psi})


def _evolve_madelung(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    section = cfg.madelung
    include = section.quantum_term if section else True
    compare = section.compare_schroedinger if section else True
    grid = s.grid

    state = to_madelung(s.psi0, hbar)
    rows = []
    metrics: dict[str, float] = {}

    cn = CrankNicolson(quantize(s.H, grid, hbar), hbar) if compare else None
    cn_dt = (section.schroedinger_dt if section and section.schroedinger_dt else ts.dt)
    interval = ts.dt * ts.output_every
    cn_steps = max(1, int(round(interval / cn_dt)))
    psi = s.psi0
    rho_gap = grad_gap = energy_gap = 0.0

    for step in range(1, ts.steps + 1):
        state = evolve_madelung(s.H, state, ts.dt, hbar, include)
        if step % ts.output_every != 0 and step != ts.steps:
            continue
        row = {"t": state.t, "mass": integrate(state.rho)}
        if cn is not None:
            for _ in range(cn_steps):
                psi = cn.step(psi, interval / cn_steps)
            rho_w = np.abs(psi.values) ** 2
            grad_w, _ = phase_gradient(psi, hbar)
            grad_m = [derivative(state.S.values, grid, k, 1) for k in range(grid.rank)]
            row["rho_l2"] = _l2(state.rho.values - rho_w, grid)
            row["grad_S_l2"] = float(
                np.sqrt(sum(_l2(gm - gw, grid, rho_w) ** 2 for gm, gw in zip(grad_m, grad_w, strict=True)))
            )
            row["energy_madelung"] = energy(s.H, state, hbar, state.t)
            row["energy_wave"] = energy(s.H, psi, hbar, state.t)
            rho_gap = max(rho_gap, row["rho_l2"])
            grad_gap = max(grad_gap, row["grad_S_l2"])
            energy_gap = max(energy_gap, abs(row["energy_madelung"] - row["energy_wave"]))
        rows.append(row)

    series = pd.DataFrame(rows)
    metrics["mass_drift"] = float(np.max(np.abs(series["mass"] - 1.0)))
    if cn is not None:
        metrics.update({"rho_l2": rho_gap, "grad_S_l2": grad_gap, "energy_gap": energy_gap})
    return ScenarioOutput(
        metrics, {"madelung": series}, {"rho_final": state.rho, "S_final": state.S}
    )


def _evolve_classical(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    start = to_madelung(s.psi0, hbar)
    history = evolve(
        s.H, ClassicalEnsembleState(start.S, start.rho, 0.0), ts.dt, ts.steps, ts.output_every
    )
    q = s.grid.mesh()[0]
    series = pd.DataFrame(
        {
            "t": [h.t for h in history],
            "mass": [integrate(h.rho) for h in history],
            "mean_q0": [integrate(h.rho.with_values(q * h.rho.values)) for h in history],
        }
    )
    final = history[-1]
    metrics = {"mass_drift": float(np.max(np.abs(series["mass"] - series["mass"].iloc[0])))}

    if not velocity_functional(s.H).uses_phase:
        # S-independent velocity: the quantum density must follow the same transport
        cn = CrankNicolson(quantize(s.H, s.grid, hbar), hbar)
        psi = s.psi0
        for _ in range(ts.steps):
            psi = cn.step(psi, ts.dt)
        gap = np.abs(np.abs(psi.values) ** 2 - final.rho.values)
        metrics["classical_quantum_rho_gap"] = float(gap.max())
    return ScenarioOutput(
        metrics, {"classical": series}, {"rho_final": final.rho, "S_final": final.S}
    )


def _distribution(cfg: ScenarioConfig) -> LambdaDistribution:
    spec = cfg.hv.distribution if cfg.hv else None
    if spec is None:
        return LambdaDistribution(hbar=cfg.hbar)
    return LambdaDistribution(spec.kind, cfg.hbar, spec.value, spec.weight)


def smooth_density(grid: Grid, seed: int, k_max: int = 3, amplitude: float = 0.2) -> RealField:
    """Random positive density exp(sum_k a_k cos(2 pi k x / L + phi_k)) along axis 0."""
    rng = np.random.default_rng(seed)
    ax = grid.axes[0]
    x = grid.mesh()[0]
    u = np.zeros(grid.shape)
    for k in range(1, k_max + 1):
        a, phi = rng.uniform(-amplitude, amplitude), rng.uniform(0.0, 2.0 * np.pi)
        u = u + a * np.cos(2.0 * np.pi * k * (x - ax.lower) / ax.length + phi)
    rho = np.exp(u)
    return RealField(grid, rho / integrate(RealField(grid, rho)))


def _hv_branches(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    mode = cfg.hv.mode if cfg.hv else None
    init = to_madelung(s.psi0, hbar)
    run = evolve_branches(
        s.H, init, ts.dt, ts.steps, mode or EvolutionMode.SHARED_RHO, hbar, ts.output_every
    )

    def average_gap(b: BranchState) -> float:
        # both signs on the same (rho, S); the lambda-odd terms must cancel
        rp, sp = branch_rhs(s.H, BranchState(hbar, b.S, b.rho, b.t))
        rm, sm = branch_rhs(s.H, BranchState(-hbar, b.S, b.rho, b.t))
        target_rho, target_S = madelung_rhs(s.H, MadelungState(b.rho, b.S, b.t), hbar)
        return max(
            float(np.max(np.abs(0.5 * (rp + rm) - target_rho))),
            float(np.max(np.abs(0.5 * (sp + sm) - target_S))),
        )

    gaps = [average_gap(bp) for bp in run.plus]
    reference = init
    rows = []
    for j, (bp, bm) in enumerate(zip(run.plus, run.minus, strict=True)):
        avg = average_branches(bp, bm)
        rows.append(
            {"t": avg.t, "mass": integrate(avg.rho), "rhs_average_gap": gaps[j]}
        )
    for _ in range(ts.steps):
        reference = evolve_madelung(s.H, reference, ts.dt, hbar)
    final = average_branches(run.plus[-1], run.minus[-1])
    metrics = {
        "phase_symmetry": check_phase_symmetry(run),
        "average_vs_madelung": float(np.max(np.abs(final.rho.values - reference.rho.values))),
        "fluctuation_residual": fluctuation_identity_residual(smooth_density(s.grid, cfg.seed)),
        "rhs_average_gap": max(gaps),
    }
    return ScenarioOutput(
        metrics, {"branches": pd.DataFrame(rows)}, {"rho_final": final.rho, "S_final": final.S}
    )


def _hv_flip(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    hv = cfg.hv
    dist = _distribution(cfg)
    init = to_madelung(s.psi0, hbar)
    dt_macro = ts.dt
    n_micro = sorted(hv.n_micro) if hv else [4, 16, 64]

    # oracle: deterministic Madelung evolution at the finest micro-step
    fine = max(n_micro)
    oracle = init
    for _ in range(ts.steps * fine):
        oracle = evolve_madelung(s.H, oracle, dt_macro / fine, hbar)

    rows, errors = [], []
    for n in n_micro:
        replicas = flip_ensemble(
            s.H,
            init,
            dt_macro,
            n,
            hv.replicas if hv else 32,
            cfg.seed,
            dist,
            hv.antithetic if hv else False,
            ts.steps,
        )
        per_replica = [_l2(r.rho.values - oracle.rho.values, s.grid) for r in replicas]
        mean_rho = np.mean([r.rho.values for r in replicas], axis=0)
        err = float(np.mean(per_replica))
        errors.append(err)
        rows.append(
            {
                "n_micro": n,
                "replica_error": err,
                "mean_density_error": _l2(mean_rho - oracle.rho.values, s.grid),
            }
        )
    metrics = {f"flip_error_n{n}": e for n, e in zip(n_micro, errors, strict=True)}
    metrics["flip_monotone_violations"] = float(
        sum(b >= a for a, b in zip(errors[:-1], errors[1:], strict=True))
    )

    # antithetic pair order by step halving
    pair_errors = []
    for h in (0.5 * dt_macro, 0.25 * dt_macro):
        paired = antithetic_pair(s.H, init, h, dist.magnitude)
        ref = init
        for _ in range(16):
            ref = evolve_madelung(s.H, ref, 2.0 * h / 16, hbar)
        pair_errors.append(float(np.max(np.abs(paired.rho.values - ref.rho.values))))
    metrics["antithetic_order"] = float(np.log2(pair_errors[0] / pair_errors[1]))
    logger.info(f"Flip errors {errors}, antithetic order {metrics['antithetic_order']:.3f}")
    return ScenarioOutput(metrics, {"flip_convergence": pd.DataFrame(rows)})


def _hv_lambda(cfg: ScenarioConfig) -> ScenarioOutput:
    dist = _distribution(cfg)
    draws = cfg.hv.draws if cfg.hv else 10_000
    lams = sample_lambdas(dist, draws, cfg.seed)
    plus = float(np.mean(lams > 0))
    expected_plus = dist.weight if dist.kind is LambdaKind.GENERALIZED_TWO_POINT else 0.5
    return ScenarioOutput(
        metrics={
            "magnitude_error": float(np.max(np.abs(np.abs(lams) - dist.magnitude))),
            "sign_imbalance": abs(plus - expected_plus),
            "mean_error": abs(float(lams.mean()) - dist.mean),
        },
        tables={"lambdas": pd.DataFrame({"draw": np.arange(draws), "lambda": lams})},
    )


def _pilot_wave(cfg: ScenarioConfig) -> ScenarioOutput:
    s = _setup(cfg)
    hbar, ts = cfg.hbar, cfg.time
    pilot = cfg.pilot
    particles = pilot.particles if pilot else 10_000
    substeps = pilot.substeps if pilot else 4
    coarsen = pilot.coarsen if pilot else 1

    cn = CrankNicolson(quantize(s.H, s.grid, hbar), hbar)
    psi, times, states = s.psi0, [0.0], [s.psi0]
    for step in range(1, ts.steps + 1):
        psi = cn.step(psi, ts.dt)
        if step % ts.output_every == 0 or step == ts.steps:
            times.append(step * ts.dt)
            states.append(psi)
    snapshots = SnapshotSeries(np.asarray(times), states)

    seeds = seed_ensemble(s.psi0, particles, np.random.default_rng(cfg.seed))
    ensemble = guide(snapshots, s.H, seeds, substeps, hbar)
    l1 = equivariance_test(ensemble, coarsen=coarsen)
    metrics = {
        "equivariance_l1_max": float(l1.max()),
        "equivariance_scaling": equivariance_scaling(
            snapshots, s.H, particles, cfg.seed + 1, substeps, hbar, baseline=ensemble
        ),
        "flagged_fraction": ensemble.flagged_fraction,
    }
    if isinstance(s.H, MeasurePosition):
        system = ensemble.trajectories.positions[:, :, s.H.system_axis]
        metrics["system_drift"] = float(np.max(np.abs(system - system[0])))
    tables = {
        "equivariance": pd.DataFrame({"t": snapshots.times, "l1": l1}),
        "ensemble": trajectory_frame(ensemble.trajectories),
    }
    return ScenarioOutput(metrics, tables, {"psi_final": states[-1]})


def _center_separation_error(result: MeasurementResult) -> float:
    """Relative error of the outer pointer-lobe centroid spacing against g (a_max - a_min) T."""
    mcfg, hist = result.config, result.histogram
    pointer = result.pointer
    q = pointer.grid.coordinates(0)
    centers = mcfg.pointer.center + mcfg.g * hist.eigenvalues * mcfg.duration
    nearest = np.argmin(np.abs(q[:, None] - centers[None, :]), axis=1)
    centroids = []
    for j in (0, centers.size - 1):
        w = np.where(nearest == j, pointer.values, 0.0)
        if w.sum() <= 0.0:
            return float("nan")
        centroids.append(float(np.sum(w * q) / np.sum(w)))
    expected = mcfg.g * (hist.eigenvalues[-1] - hist.eigenvalues[0]) * mcfg.duration
    return abs(centroids[1] - centroids[0] - expected) / abs(expected)


def _measure(cfg: ScenarioConfig) -> ScenarioOutput:
    mcfg = cfg.measurement
    result = run_measurement(mcfg)
    hist = result.histogram
    metrics = {
        "born_deviation": hist.born_deviation(),
        "born_violation": float(not hist.within_born_bound(3.0)),
        "unresolved_fraction": hist.unresolved_fraction,
        "observable_drift": result.observable_drift,
        "flagged_fraction": result.trajectories.flagged_fraction,
    }
    if np.isfinite(result.separation_ratio):
        metrics["separation_ratio"] = result.separation_ratio
        metrics["center_separation_error"] = _center_separation_error(result)

    if mcfg.kind is MeasurementKind.POSITION:
        metrics["readout_error"] = float(np.max(np.abs(result.readouts - result.initial_system)))
        gaps = quantum_vs_classical_position(mcfg)
        metrics["classicality_rho"] = gaps["rho"]
        metrics["classicality_grad_S"] = gaps["grad_S"]
        if mcfg.chain:
            chain = repeated_pointer_measurement(mcfg)
            metrics["chain_agreement"] = float(chain.agreement().max())
    if mcfg.kind is MeasurementKind.MOMENTUM:
        contrast = quantum_vs_classical_position(mcfg)
        metrics["momentum_contrast"] = contrast["rho"]
        metrics["momentum_contrast_grad_S"] = contrast["grad_S"]
    if mcfg.kind is MeasurementKind.LINEAR_OBSERVABLE:
        metrics["oracle_gap"] = linear_observable_oracle(mcfg)

    pointer = result.pointer
    tables = {
        "outcomes": hist.to_frame(),
        "pointer_density": profile_frame(pointer, "density"),
        "observable": pd.DataFrame({"t": result.snapshots.times, "A1": result.observable}),
        "readouts": pd.DataFrame(
            {
                "particle": np.arange(result.readouts.size),
                "q_system_0": result.initial_system,
                "readout": result.readouts,
            }
        ),
    }
    return ScenarioOutput(metrics, tables, {"psi_final": result.snapshots.states[-1]}, result.warnings)


HANDLERS: dict[ScenarioKind, Callable[[ScenarioConfig], ScenarioOutput]] = {
    ScenarioKind.ORDERING_REPORT: _ordering_report,
    ScenarioKind.EVOLVE_QUANTUM: _evolve_quantum,
    ScenarioKind.EVOLVE_MADELUNG: _evolve_madelung,
    ScenarioKind.EVOLVE_CLASSICAL: _evolve_classical,
    ScenarioKind.HV_BRANCHES: _hv_branches,
    ScenarioKind.HV_FLIP: _hv_flip,
    ScenarioKind.HV_LAMBDA: _hv_lambda,
    ScenarioKind.PILOT_WAVE: _pilot_wave,
    ScenarioKind.MEASURE: _measure,
}


# ============================================================================
# Checks and manifest
# ============================================================================


def evaluate_checks(checks: dict[str, float], metrics: dict[str, float]) -> list[CheckResult]:
    """Compare metrics against thresholds.

    A check passes when the metric is <= its threshold, or >= for metrics in
    LOWER_BOUND_METRICS. A metric the scenario did not produce fails.
    """
    results = []
    for name, threshold in sorted(checks.items()):
        value = metrics.get(name)
        if value is None or not np.isfinite(value):
            passed = False
        elif name in LOWER_BOUND_METRICS:
            passed = value >= threshold
        else:
            passed = value <= threshold
        results.append(CheckResult(name=name, value=value, threshold=threshold, passed=passed))
        level = logging.INFO if passed else logging.WARNING
        logger.log(level, f"Check {name}: {value} vs {threshold} -> {'pass' if passed else 'FAIL'}")
    return results


def _failure_message(cfg: ScenarioConfig, e: Exception) -> str:
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    sim_time = getattr(e, "time", None)
    where = f" at t={sim_time:.6g}" if isinstance(sim_time, float) else ""
    return f"[{stamp}] {cfg.kind.value}{where}: {type(e).__name__}: {e}"


def _write_outputs(output: ScenarioOutput, out: Path) -> list[OutputFile]:
    paths = []
    for stem, frame in sorted(output.tables.items()):
        paths.append(write_csv(frame, out / f"{stem}.csv"))
    for stem, fld in sorted(output.fields.items()):
        paths.append(dump_field(fld, out / f"{stem}.hvq"))
    return [
        OutputFile(path=p.name, sha256=file_sha256(p), bytes=p.stat().st_size) for p in paths
    ]


def run(
    cfg: ScenarioConfig, out_dir: str | Path | None = None, name: str = "scenario"
) -> RunManifest:
    """Execute one scenario and write its outputs and manifest.

    A RUNNING sentinel exists for the whole run and is removed only after the
    manifest is in place, so an interrupted run never leaves a manifest.

    Args:
        cfg: Validated configuration
        out_dir: Output directory (default: cfg.output_dir, then HVQUANT_OUT/name)
        name: Scenario name used for the default directory

    Returns:
        The manifest that was written.
    """
    out = Path(out_dir or cfg.output_dir or Path(DEFAULT_OUTPUT_ROOT) / name)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).unlink(missing_ok=True)
    sentinel = out / SENTINEL
    sentinel.write_text(f"{cfg.kind.value}\n")

    digest = config_digest(cfg.model_dump(mode="json"))
    logger.info(f"Running {name} ({cfg.kind.value}, config {digest}) -> {out}")
    start = time.perf_counter()
    error: str | None = None
    output = ScenarioOutput()
    try:
        output = HANDLERS[cfg.kind](cfg)
    except UnresolvableOutcomesError as e:
        error = _failure_message(cfg, e)
        logger.error(f"Unresolvable outcomes: {error}")
    except (StabilityError, CausticError, NodeError, PositivityError) as e:
        error = _failure_message(cfg, e)
        logger.error(f"Numerical breakdown: {error}")
    except HVQuantError as e:
        error = _failure_message(cfg, e)
        logger.error(f"Scenario failed: {error}")
    except Exception as e:
        error = _failure_message(cfg, e)
        logger.exception(f"Unexpected error in {name}: {e}")

    files = _write_outputs(output, out)
    checks = evaluate_checks(cfg.checks, output.metrics) if error is None else []
    if error is not None:
        status = "error"
    else:
        status = "pass" if all(c.passed for c in checks) else "fail"

    manifest = RunManifest(
        config=cfg.model_dump(mode="json"),
        code_version=__version__,
        wall_time=time.perf_counter() - start,
        status=status,
        checks=checks,
        metrics={k: float(v) for k, v in sorted(output.metrics.items())},
        files=files,
        error=error,
        warnings=output.warnings,
    )
    atomic_write_json(manifest.model_dump(mode="json"), out / MANIFEST)
    sentinel.unlink()
    logger.info(f"{name}: {status} in {manifest.wall_time:.1f}s")
    return manifest


def run_file(path: str | Path, out_root: str | Path | None = None, seed: int | None = None) -> RunManifest:
    """Load, optionally reseed, and run a scenario file.

    The output directory is ``out_root/<file stem>`` when out_root is given.
    """
    path = Path(path)
    cfg = load_config(path)
    if seed is not None:
        cfg = with_seed(cfg, seed)
    out = Path(out_root) / path.stem if out_root is not None else None
    return run(cfg, out, path.stem)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Copy of cfg with the scenario (and measurement) seed replaced."""
    update: dict = {"seed": seed}
    if cfg.measurement is not None:
        update["measurement"] = cfg.measurement.model_copy(update={"seed": seed})
    return cfg.model_copy(update=update)
