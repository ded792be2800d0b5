"""Shared fixtures for the hvquant test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from hvquant.fields import Axis, ComplexField, Grid  # noqa: E402
from hvquant.quantum import gaussian_packet  # noqa: E402

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def periodic_grid() -> Grid:
    """128 points on [0, 2 pi)."""
    return Grid((Axis(128, 0.0, 2.0 * np.pi, "periodic"),))


@pytest.fixture
def dirichlet_grid() -> Grid:
    """257 points on [-8, 8]."""
    return Grid((Axis(257, -8.0, 8.0, "dirichlet"),))


@pytest.fixture
def harmonic_grid() -> Grid:
    """Box in which the oscillator ground state stays above the node threshold."""
    return Grid((Axis(256, -5.0, 5.0, "dirichlet"),))


@pytest.fixture
def gaussian(dirichlet_grid: Grid) -> ComplexField:
    """Unit-width packet at the origin with wavenumber 0.5."""
    return ComplexField(dirichlet_grid, gaussian_packet(dirichlet_grid, [0.0], [1.0], [0.5]))


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR
