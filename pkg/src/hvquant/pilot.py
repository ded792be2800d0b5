"""Pilot-wave trajectories.

The effective velocity is the velocity functional evaluated on the quantum
phase. Particles seeded from |psi(0)|**2 are carried through a frozen series
of wavefunction snapshots (space: multilinear, time: linear), and the
equivariance test histograms them against |psi(t)|**2.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from .classical import TrajectorySet, integrate_between
from .config import DEFAULT_HBAR, NODE_EPSILON
from .exceptions import UsageError
from .fields import Axis, ComplexField, FieldInterpolator, Grid, RealField, derivative
from .quantizer import ClassicalHamiltonian, velocity_functional
from .quantum import MadelungState

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SnapshotSeries:
    """Wavefunction snapshots at increasing times.

    Attributes:
        times: Snapshot times, shape (m,)
        states: One wavefunction per time
    """

    times: np.ndarray
    states: list[ComplexField]

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.size != len(self.states) or times.size < 2:
            raise UsageError("times", times.size, reason="need one state per time, at least two")
        if np.any(np.diff(times) <= 0):
            raise UsageError("times", "order", reason="snapshot times must increase")
        object.__setattr__(self, "times", times)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid


@dataclass(frozen=True, eq=False)
class GuidedEnsemble:
    """Guided particles and the snapshots that carried them.

    Attributes:
        trajectories: Positions at every snapshot time
        snapshots: Generating wavefunction series
    """

    trajectories: TrajectorySet
    snapshots: SnapshotSeries

    @property
    def times(self) -> np.ndarray:
        return self.trajectories.times

    @property
    def flagged_fraction(self) -> float:
        return self.trajectories.flagged_fraction


# ============================================================================
# Effective velocity
# ============================================================================


def phase_gradient(psi: ComplexField, hbar: float) -> tuple[list[np.ndarray], np.ndarray]:
    """hbar Im(psi* grad psi) / |psi|**2 with the region where it is defined.

    The current form needs no unwrapped phase, so it stays valid across
    branch cuts of arg(psi) (vortex states).
    """
    values = psi.values
    density = np.abs(values) ** 2
    mask = density > NODE_EPSILON * float(density.max())
    safe = np.where(mask, density, 1.0)
    grad = []
    for k in range(psi.grid.rank):
        dpsi = derivative(values, psi.grid, k, 1)
        grad.append(np.where(mask, hbar * np.imag(np.conj(values) * dpsi) / safe, 0.0))
    return grad, mask


def velocity_arrays(
    source: ComplexField | MadelungState,
    H: ClassicalHamiltonian,
    hbar: float = DEFAULT_HBAR,
    t: float = 0.0,
) -> list[np.ndarray]:
    """Effective velocity components, NaN where the phase is undefined."""
    vf = velocity_functional(H)
    if isinstance(source, MadelungState):
        grid = source.S.grid
        grad = [derivative(source.S.values, grid, k, 1) for k in range(grid.rank)]
        mask = source.rho.values > NODE_EPSILON * float(source.rho.values.max())
    else:
        grid = source.grid
        grad, mask = phase_gradient(source, hbar)
    v = vf.from_gradient(grad, grid.mesh(), t)
    v = [np.broadcast_to(np.asarray(vk, dtype=float), grid.shape).copy() for vk in v]
    if vf.uses_phase:
        for vk in v:
            vk[~mask] = np.nan
    return v


@dataclass(frozen=True, eq=False)
class GuidanceVelocity:
    """Guidance velocity components and where they are defined.

    Attributes:
        components: One field per axis, zero in near-node cells
        defined: False where rho <= NODE_EPSILON * max rho and v was zeroed
    """

    components: list[RealField]
    defined: np.ndarray

    def __getitem__(self, axis: int) -> RealField:
        return self.components[axis]

    def __len__(self) -> int:
        return len(self.components)

    @property
    def zeroed_fraction(self) -> float:
        return float(np.mean(~self.defined))


def effective_velocity(
    source: ComplexField | MadelungState,
    H: ClassicalHamiltonian,
    hbar: float = DEFAULT_HBAR,
    t: float = 0.0,
) -> GuidanceVelocity:
    """v = f(S_Q), the guidance velocity read off the quantum phase.

    Samples in near-node cells (rho <= NODE_EPSILON * max rho) are set to
    zero and reported in ``defined``; ``velocity_arrays`` marks them NaN.
    """
    grid = source.grid if isinstance(source, ComplexField) else source.S.grid
    raw = velocity_arrays(source, H, hbar, t)
    defined = np.all([np.isfinite(vk) for vk in raw], axis=0)
    if not defined.all():
        logger.debug(f"Zeroed velocity in {int((~defined).sum())} near-node cells")
    return GuidanceVelocity(
        [RealField(grid, np.nan_to_num(vk, nan=0.0)) for vk in raw], defined
    )


# ============================================================================
# Sampling
# ============================================================================


def _axis_cdf(density: np.ndarray, ax: Axis) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and unnormalized CDF along the last axis; periodic axes close the cell."""
    x = ax.coordinates
    if ax.periodic:
        x = np.append(x, ax.upper)
        density = np.concatenate([density, density[..., :1]], axis=-1)
    return x, cumulative_trapezoid(density, x, axis=-1, initial=0.0)


def _invert(cdf: np.ndarray, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row-wise linear inversion of monotone CDF rows at the given targets."""
    idx = np.sum(cdf < targets[:, None], axis=1) - 1
    idx = np.clip(idx, 0, x.size - 2)
    rows = np.arange(cdf.shape[0])
    lo, hi = cdf[rows, idx], cdf[rows, idx + 1]
    frac = np.where(hi > lo, (targets - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
    return x[idx] + np.clip(frac, 0.0, 1.0) * (x[idx + 1] - x[idx])


def sample_density(
    rho: RealField, n: int, seed: int | np.random.Generator | None = None
) -> np.ndarray:
    """Draw n points distributed per rho.

    Rank 1: inverse CDF. Rank 2: inverse CDF of the marginal, then of the
    conditional with rows mixed linearly between neighbouring nodes. Rank 3
    and above: rejection sampling against max(rho).

    Returns:
        Array of shape (n, rank).

    Raises:
        UsageError: If n <= 0.
    """
    if n <= 0:
        raise UsageError("n", n, reason="need a positive sample count")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    grid = rho.grid
    values = np.clip(rho.values, 0.0, None)

    if grid.rank == 1:
        x, cdf = _axis_cdf(values, grid.axes[0])
        u = rng.random(n) * cdf[-1]
        return np.interp(u, cdf, x)[:, None]

    if grid.rank == 2:
        ax0, ax1 = grid.axes
        y, row_cdf = _axis_cdf(values, ax1)
        x, marginal_cdf = _axis_cdf(row_cdf[:, -1], ax0)
        xs = np.interp(rng.random(n) * marginal_cdf[-1], marginal_cdf, x)
        if ax0.periodic:
            row_cdf = np.concatenate([row_cdf, row_cdf[:1]], axis=0)
        pos = np.clip((xs - ax0.lower) / ax0.spacing, 0.0, row_cdf.shape[0] - 1.0)
        i = np.minimum(pos.astype(int), row_cdf.shape[0] - 2)
        w = (pos - i)[:, None]
        mixed = (1.0 - w) * row_cdf[i] + w * row_cdf[i + 1]
        ys = _invert(mixed, y, rng.random(n) * mixed[:, -1])
        return np.stack([xs, ys], axis=-1)

    interp = FieldInterpolator(grid, values, strict=False)
    lower = np.array([ax.lower for ax in grid.axes])
    upper = np.array([ax.upper for ax in grid.axes])
    peak = float(values.max())
    accepted: list[np.ndarray] = []
    count = 0
    while count < n:
        batch = lower + (upper - lower) * rng.random((2 * n, grid.rank))
        keep = batch[rng.random(2 * n) * peak < np.nan_to_num(interp(batch))]
        accepted.append(keep)
        count += keep.shape[0]
    return np.concatenate(accepted)[:n]


def seed_ensemble(
    psi: ComplexField, n: int, seed: int | np.random.Generator | None = None
) -> np.ndarray:
    """Sample initial positions from |psi|**2 and log a goodness-of-fit check.

    For 1-D states the draw is compared with the quadrature CDF by a
    Kolmogorov-Smirnov test.
    """
    rho = RealField(psi.grid, np.abs(psi.values) ** 2)
    points = sample_density(rho, n, seed)
    if psi.grid.rank == 1:
        x, cdf = _axis_cdf(rho.values, psi.grid.axes[0])
        result = stats.kstest(points[:, 0], lambda s: np.interp(s, x, cdf / cdf[-1]))
        level = logging.WARNING if result.pvalue < 0.01 else logging.DEBUG
        logger.log(level, f"Seeding KS statistic {result.statistic:.4g} (p={result.pvalue:.3g})")
    return points


# ============================================================================
# Guidance
# ============================================================================


def guide(
    snapshots: SnapshotSeries,
    H: ClassicalHamiltonian,
    seeds: np.ndarray,
    n_substeps: int = 4,
    hbar: float = DEFAULT_HBAR,
) -> GuidedEnsemble:
    """Integrate guided trajectories through a snapshot series.

    Particles in undefined-velocity cells keep their last finite velocity
    and are flagged.
    """
    grid = snapshots.grid
    times = snapshots.times
    fields = [
        FieldInterpolator(
            grid, np.stack(velocity_arrays(psi, H, hbar, float(t)), axis=-1), strict=False
        )
        for t, psi in zip(times, snapshots.states, strict=True)
    ]

    def velocity(points: np.ndarray, t: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        w = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * fields[i](points) + w * fields[i + 1](points)

    trajectories = integrate_between(velocity, seeds, times, n_substeps, grid)
    if trajectories.flagged_fraction > 0:
        logger.warning(f"Flagged fraction {trajectories.flagged_fraction:.4g}")
    return GuidedEnsemble(trajectories, snapshots)


def _bin_edges(ax: Axis, coarsen: int) -> np.ndarray:
    edges = ax.lower - 0.5 * ax.spacing + ax.spacing * np.arange(ax.n + 1)
    coarse = edges[::coarsen]
    if coarse[-1] != edges[-1]:
        coarse = np.append(coarse, edges[-1])
    return coarse


def _binned_probability(density: np.ndarray, grid: Grid, coarsen: int) -> np.ndarray:
    mass = density * grid.cell_volume
    for k, ax in enumerate(grid.axes):
        starts = np.arange(0, ax.n, coarsen)
        mass = np.add.reduceat(mass, starts, axis=k)
    return mass / mass.sum()


def equivariance_test(
    ensemble: GuidedEnsemble,
    snapshots: SnapshotSeries | None = None,
    coarsen: int = 1,
) -> np.ndarray:
    """L1 distance between the particle histogram and |psi(t)|**2 per output time.

    Bins are grid cells centered on the nodes, merged ``coarsen`` at a time.
    """
    if coarsen < 1:
        raise UsageError("coarsen", coarsen, reason="must be a positive integer")
    snapshots = snapshots or ensemble.snapshots
    grid = snapshots.grid
    edges = [_bin_edges(ax, coarsen) for ax in grid.axes]
    distances = []
    for positions, psi in zip(ensemble.trajectories.positions, snapshots.states, strict=True):
        pts = positions.copy()
        for k, ax in enumerate(grid.axes):
            if ax.periodic:
                shift = ax.lower - 0.5 * ax.spacing
                pts[:, k] = shift + np.mod(pts[:, k] - shift, ax.length)
        counts, _ = np.histogramdd(pts, bins=edges)
        empirical = counts / pts.shape[0]
        exact = _binned_probability(np.abs(psi.values) ** 2, grid, coarsen)
        distances.append(float(np.sum(np.abs(empirical - exact))))
    return np.asarray(distances)


def equivariance_scaling(
    snapshots: SnapshotSeries,
    H: ClassicalHamiltonian,
    particles: int,
    seed: int | np.random.Generator | None = None,
    n_substeps: int = 4,
    hbar: float = DEFAULT_HBAR,
    coarsen: int = 1,
    baseline: GuidedEnsemble | None = None,
) -> float:
    """Time-averaged L1 distance at n particles over that at 4n.

    Sampling noise in each bin falls as n**-1/2, so an equivariant ensemble
    scores close to 2; a systematic drift away from |psi|**2 pulls the ratio
    toward 1. ``baseline`` reuses an already guided n-particle ensemble.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    first = snapshots.states[0]
    small = baseline or guide(snapshots, H, seed_ensemble(first, particles, rng), n_substeps, hbar)
    large = guide(snapshots, H, seed_ensemble(first, 4 * particles, rng), n_substeps, hbar)
    l1_small = float(np.mean(equivariance_test(small, snapshots, coarsen)))
    l1_large = float(np.mean(equivariance_test(large, snapshots, coarsen)))
    logger.info(f"Equivariance L1 {l1_small:.4g} at n={particles}, {l1_large:.4g} at 4n")
    return l1_small / l1_large
