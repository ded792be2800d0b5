"""CLI entry point for the simulator.

This module allows the package to be run as a module:
    python -m hvquant
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
