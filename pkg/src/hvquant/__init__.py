"""Hidden-variable quantization simulator.

Numerical experiments for a quantization scheme in which the quantum
action is the average of a classical action over a two-valued hidden
variable: classical Hamilton-Jacobi ensembles, Schroedinger and Madelung
evolution, the +/- lambda branch pair, fast-flip stochastic dynamics,
pilot-wave trajectories and impulsive pointer measurements.

Example:
    Run every bundled scenario:

    $ hvquant check --jobs 4

    Or one scenario with a different seed:

    $ hvquant measure --config scenarios/born-momentum.json --seed 7
"""

__version__ = "0.1.0"

__all__ = ["main", "__version__"]


def main() -> None:
    """Entry point for the CLI."""
    import sys

    from .cli import main as cli_main

    sys.exit(cli_main())
