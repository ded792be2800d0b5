"""Grids, sampled fields and the finite-difference toolkit.

Every engine in hvquant works on fields sampled over a regular grid. This
module provides:

- ``Axis`` / ``Grid``: regular axes with periodic or dirichlet-zero boundaries
- ``RealField`` / ``ComplexField``: immutable samples in row-major order
- 4th-order ``gradient`` and ``laplacian`` with one-sided edge stencils
- product trapezoid/rectangle quadrature (``integrate``)
- multilinear interpolation with periodic wrap (``interpolate``)
- the "HVQ1" binary dump format

Example:
    >>> grid = Grid.from_bounds([(64, -5.0, 5.0, "dirichlet")])
    >>> (q,) = grid.mesh()
    >>> rho = RealField(grid, np.exp(-q**2) / np.sqrt(np.pi))
    >>> round(integrate(rho), 6)
    1.0
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator

from .exceptions import OutOfDomainError, UsageError
from .models import BoundaryKind

logger = logging.getLogger(__name__)

MAGIC = b"HVQ1"
MIN_POINTS = 8

# ============================================================================
# Grid
# ============================================================================


@dataclass(frozen=True)
class Axis:
    """One axis of a regular grid.

    Attributes:
        n: Number of sample points
        lower: Lower coordinate bound
        upper: Upper coordinate bound
        boundary: Boundary kind of the axis
    """

    n: int
    lower: float
    upper: float
    boundary: BoundaryKind = BoundaryKind.DIRICHLET

    def __post_init__(self) -> None:
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))
        if self.n < MIN_POINTS:
            raise UsageError("n", self.n, reason=f"an axis needs at least {MIN_POINTS} points")
        if not self.upper > self.lower:
            raise UsageError(
                "upper", self.upper, reason=f"must exceed lower bound {self.lower}"
            )

    @property
    def periodic(self) -> bool:
        return self.boundary is BoundaryKind.PERIODIC

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def spacing(self) -> float:
        """Grid spacing h: L/N on periodic axes, L/(N-1) on dirichlet axes."""
        if self.periodic:
            return self.length / self.n
        return self.length / (self.n - 1)

    @property
    def coordinates(self) -> np.ndarray:
        return self.lower + self.spacing * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers conjugate to this axis (FFT ordering)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)


@dataclass(frozen=True)
class Grid:
    """Regular rectangular grid over configuration space.

    Attributes:
        axes: Axis descriptors, in row-major order
    """

    axes: tuple[Axis, ...]

    def __post_init__(self) -> None:
        if not self.axes:
            raise UsageError("axes", self.axes, reason="a grid needs at least one axis")
        object.__setattr__(self, "axes", tuple(self.axes))

    @classmethod
    def from_bounds(
        cls, specs: list[tuple[int, float, float, Union[str, BoundaryKind]]]
    ) -> "Grid":
        """Build a grid from (n, lower, upper, boundary) tuples."""
        return cls(tuple(Axis(n, lo, hi, BoundaryKind(b)) for n, lo, hi, b in specs))

    @property
    def rank(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(ax.spacing for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def coordinates(self, axis: int) -> np.ndarray:
        self._check_axis(axis)
        return self.axes[axis].coordinates

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to the grid shape (ij indexing)."""
        return tuple(np.meshgrid(*[ax.coordinates for ax in self.axes], indexing="ij"))

    def quadrature_weights(self) -> np.ndarray:
        """Product weights: rectangle on periodic axes, trapezoid on dirichlet."""
        weights = np.ones(self.shape)
        for k, ax in enumerate(self.axes):
            w = np.full(ax.n, ax.spacing)
            if not ax.periodic:
                w[0] *= 0.5
                w[-1] *= 0.5
            shape = [1] * self.rank
            shape[k] = ax.n
            weights = weights * w.reshape(shape)
        return weights

    def _check_axis(self, axis: int) -> None:
        if not 0 <= axis < self.rank:
            raise UsageError("axis", axis, list(range(self.rank)))


# ============================================================================
# Fields
# ============================================================================


@dataclass(frozen=True, eq=False)
class _Field:
    grid: Grid
    values: np.ndarray

    _dtype = np.float64

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=self._dtype, order="C")
        if values.shape != self.grid.shape:
            raise UsageError(
                "values",
                values.shape,
                reason=f"sample shape must match grid shape {self.grid.shape}",
            )
        if not np.all(np.isfinite(values)):
            raise UsageError("values", "non-finite", reason="fields hold finite samples only")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray):
        """Return a field of the same kind over the same grid."""
        return type(self)(self.grid, values)


@dataclass(frozen=True, eq=False)
class RealField(_Field):
    """Real scalar field (rho, S, S_Q, R) sampled on a grid.

    Attributes:
        grid: Grid the samples live on
        values: Real samples, row-major, shape ``grid.shape``
    """

    _dtype = np.float64


@dataclass(frozen=True, eq=False)
class ComplexField(_Field):
    """Complex scalar field (wavefunctions) sampled on a grid.

    Attributes:
        grid: Grid the samples live on
        values: Complex samples, row-major, shape ``grid.shape``
    """

    _dtype = np.complex128


Field = Union[RealField, ComplexField]


# ============================================================================
# Finite differences
# ============================================================================


def _first_along0(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (
            (np.roll(f, 2, 0) - np.roll(f, -2, 0))
            + 8.0 * (np.roll(f, -1, 0) - np.roll(f, 1, 0))
        ) / (12.0 * h)
    out = np.empty_like(f)
    out[2:-2] = ((f[:-4] - f[4:]) + 8.0 * (f[3:-1] - f[1:-3])) / (12.0 * h)
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (
        12.0 * h
    )
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h)
    out[-1] = (
        25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3] - 16.0 * f[-4] + 3.0 * f[-5]
    ) / (12.0 * h)
    out[-2] = (3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3] + 6.0 * f[-4] - f[-5]) / (
        12.0 * h
    )
    return out


def _second_along0(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    h2 = 12.0 * h * h
    if periodic:
        return (
            16.0 * (np.roll(f, 1, 0) + np.roll(f, -1, 0))
            - (np.roll(f, 2, 0) + np.roll(f, -2, 0))
            - 30.0 * f
        ) / h2
    out = np.empty_like(f)
    out[2:-2] = (
        16.0 * (f[1:-3] + f[3:-1]) - (f[:-4] + f[4:]) - 30.0 * f[2:-2]
    ) / h2
    # one-sided rows, mirrored at the upper edge
    edges = (
        (0, 1, [f[k] for k in range(6)]),
        (-1, -2, [f[-1 - k] for k in range(6)]),
    )
    for i, j, p in edges:
        out[i] = (
            45.0 * p[0] - 154.0 * p[1] + 214.0 * p[2] - 156.0 * p[3] + 61.0 * p[4] - 10.0 * p[5]
        ) / h2
        out[j] = (
            10.0 * p[0] - 15.0 * p[1] - 4.0 * p[2] + 14.0 * p[3] - 6.0 * p[4] + p[5]
        ) / h2
    return out


def derivative(values: np.ndarray, grid: Grid, axis: int, order: int = 1) -> np.ndarray:
    """4th-order finite-difference derivative of raw samples along one axis.

    Args:
        values: Samples with shape ``grid.shape`` (real or complex)
        grid: Grid the samples live on
        axis: Axis index to differentiate along
        order: 1 or 2

    Returns:
        Array of the same shape and dtype kind.

    Raises:
        UsageError: If axis or order is out of range.
    """
    grid._check_axis(axis)
    if order not in (1, 2):
        raise UsageError("order", order, [1, 2])
    ax = grid.axes[axis]
    moved = np.moveaxis(np.asarray(values), axis, 0)
    kernel = _first_along0 if order == 1 else _second_along0
    return np.moveaxis(kernel(moved, ax.spacing, ax.periodic), 0, axis)


def gradient(f: Field, axis: int) -> Field:
    """Derivative of a field along ``axis``.

    Central 4th-order stencils in the interior, periodic wraparound on
    periodic axes and one-sided 4th-order stencils at dirichlet edges.

    Raises:
        UsageError: If ``axis`` is not an axis of the field's grid.
    """
    return f.with_values(derivative(f.values, f.grid, axis, 1))


def laplacian(f: Field) -> Field:
    """Sum over axes of 4th-order second derivatives."""
    total = np.zeros_like(f.values)
    for axis in range(f.grid.rank):
        total = total + derivative(f.values, f.grid, axis, 2)
    return f.with_values(total)


# ============================================================================
# Quadrature and interpolation
# ============================================================================


def integrate_values(values: np.ndarray, grid: Grid) -> Union[float, complex]:
    """Quadrature of raw samples over the whole grid."""
    result = np.asarray(values)
    for ax in reversed(grid.axes):
        if ax.periodic:
            result = result.sum(axis=-1) * ax.spacing
        else:
            result = trapezoid(result, dx=ax.spacing, axis=-1)
    return result.item()


def integrate(f: RealField) -> float:
    """Integral of a real field: trapezoid on dirichlet, rectangle on periodic axes."""
    return float(integrate_values(f.values, f.grid))


class FieldInterpolator:
    """Reusable multilinear interpolant over one or more sampled components.

    Periodic axes are padded with their first slice so queries wrap around.

    Attributes:
        grid: Grid the samples live on
        strict: Raise on dirichlet out-of-domain queries instead of returning NaN
    """

    def __init__(self, grid: Grid, values: np.ndarray, strict: bool = True) -> None:
        """Initialize the interpolant.

        Args:
            grid: Grid the samples live on
            values: Samples with shape ``grid.shape`` or ``grid.shape + (k,)``
            strict: Raise OutOfDomainError instead of returning NaN
        """
        self.grid = grid
        self.strict = strict
        values = np.asarray(values)
        points = []
        for k, ax in enumerate(grid.axes):
            coords = ax.coordinates
            if ax.periodic:
                first = np.take(values, [0], axis=k)
                values = np.concatenate([values, first], axis=k)
                coords = np.append(coords, ax.upper)
            points.append(coords)
        self._interp = RegularGridInterpolator(
            tuple(points), values, method="linear", bounds_error=False, fill_value=np.nan
        )

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map points onto the fundamental cell of periodic axes."""
        pts = np.array(points, dtype=float, ndmin=2)
        for k, ax in enumerate(self.grid.axes):
            if ax.periodic:
                pts[:, k] = ax.lower + np.mod(pts[:, k] - ax.lower, ax.length)
        return pts

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = self.wrap(points)
        if self.strict:
            for k, ax in enumerate(self.grid.axes):
                if ax.periodic:
                    continue
                bad = (pts[:, k] < ax.lower) | (pts[:, k] > ax.upper)
                if np.any(bad):
                    raise OutOfDomainError(pts[np.argmax(bad)].tolist(), k)
        return self._interp(pts)


def interpolate(f: Field, point: np.ndarray) -> Union[float, complex, np.ndarray]:
    """Multilinear interpolation of a field at one point or a batch of points.

    Args:
        f: Field to sample
        point: Coordinate vector of length rank, or array of shape (n, rank)

    Returns:
        Scalar for a single point, otherwise an array of n values.

    Raises:
        OutOfDomainError: If a point leaves a dirichlet axis.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    if pts.shape[-1] != f.grid.rank:
        raise UsageError("point", pts.shape, reason=f"expected trailing size {f.grid.rank}")
    result = FieldInterpolator(f.grid, f.values)(pts)
    return result[0].item() if single else result


# ============================================================================
# Binary dumps
# ============================================================================


def dump_field(f: Field, path: Union[str, Path]) -> Path:
    """Write a field in the "HVQ1" little-endian binary format.

    Layout: magic, rank (u8), dtype (u8, 0 real / 1 complex), per axis
    N (u32), lower (f64), upper (f64), boundary (u8, 0 periodic / 1 dirichlet),
    then the samples as float64 (complex interleaved re, im) in row-major order.
    """
    path = Path(path)
    is_complex = isinstance(f, ComplexField)
    header = bytearray(MAGIC)
    header += struct.pack("<BB", f.grid.rank, 1 if is_complex else 0)
    for ax in f.grid.axes:
        header += struct.pack(
            "<IddB", ax.n, ax.lower, ax.upper, 0 if ax.periodic else 1
        )
    dtype = "<c16" if is_complex else "<f8"
    path.write_bytes(bytes(header) + f.values.astype(dtype).tobytes(order="C"))
    logger.debug(f"Wrote {path} ({f.grid.shape}, complex={is_complex})")
    return path


def load_field(path: Union[str, Path]) -> Field:
    """Read a field written by :func:`dump_field`.

    Raises:
        UsageError: If the file does not start with the HVQ1 magic.
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise UsageError("path", str(path), reason="not an HVQ1 field dump")
    rank, dtype_code = struct.unpack_from("<BB", data, 4)
    offset = 6
    axes = []
    axis_size = struct.calcsize("<IddB")
    for _ in range(rank):
        n, lower, upper, boundary = struct.unpack_from("<IddB", data, offset)
        offset += axis_size
        kind = BoundaryKind.PERIODIC if boundary == 0 else BoundaryKind.DIRICHLET
        axes.append(Axis(n, lower, upper, kind))
    grid = Grid(tuple(axes))
    dtype = "<c16" if dtype_code == 1 else "<f8"
    values = np.frombuffer(data, dtype=dtype, offset=offset).reshape(grid.shape)
    cls = ComplexField if dtype_code == 1 else RealField
    return cls(grid, values)
