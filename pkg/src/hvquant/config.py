"""Configuration for hvquant.

This module provides the numerical thresholds shared by the engines and the
environment-driven defaults used by the command-line runner.
"""

import os

# Default output root for scenario runs
# Can be overridden via HVQUANT_OUT environment variable
DEFAULT_OUTPUT_ROOT: str = os.getenv("HVQUANT_OUT", os.path.join(".", "hvquant-out"))

# Reduced Planck constant in natural units
# Can be overridden via HVQUANT_HBAR environment variable
DEFAULT_HBAR: float = float(os.getenv("HVQUANT_HBAR", "1.0"))

# Madelung-form operations refuse densities below NODE_EPSILON * max(rho)
NODE_EPSILON: float = 1e-12

# Crank-Nicolson linear solves
CN_RESIDUAL_TOL: float = 1e-10
CN_MAX_REFINEMENTS: int = 8

# Wavefunction normalization accepted by expectation values
NORMALIZATION_TOL: float = 1e-6

# Imaginary part allowed in <psi, H psi>
HERMITICITY_TOL: float = 1e-8

# Explicit stepping limits: dt <= ADVECTIVE_CFL * h / max|v|
# and dt <= DIFFUSIVE_CFL * h**2 * m / hbar when lambda terms are present
ADVECTIVE_CFL: float = 0.4
DIFFUSIVE_CFL: float = 0.2

# Pointer classification
OVERLAP_RATIO: float = 8.0
SUPPORT_WIDTHS: float = 4.0
UNRESOLVED_WARNING_FRACTION: float = 0.01

# Chained position measurements (each stage adds one pointer axis)
MAX_CHAIN_STAGES: int = 3

# CSV float formatting (17 significant digits round-trips float64)
FLOAT_FORMAT: str = "%.17g"

# Scenario kinds understood by the runner
SUPPORTED_SCENARIOS = [
    "evolve-classical",
    "evolve-quantum",
    "evolve-madelung",
    "hv-branches",
    "hv-flip",
    "hv-lambda",
    "pilot-wave",
    "measure",
    "ordering-report",
]
