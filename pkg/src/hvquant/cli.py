"""Command-line interface.

Subcommands map onto scenario kinds:

    evolve    evolve-classical, evolve-quantum, evolve-madelung
    hv        hv-branches, hv-flip, hv-lambda
    pilot     pilot-wave
    measure   measure
    ordering  ordering-report
    check     every scenario file in a directory, in parallel processes

Exit status is 0 when every declared check passes, 1 when a check fails or a
scenario errors, and 2 for unusable arguments or configuration.
"""

import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import DEFAULT_OUTPUT_ROOT
from .exceptions import ConfigError
from .models import ScenarioKind
from .runner import load_config, run, run_file, with_seed

logger = logging.getLogger("hvquant")

COMMAND_KINDS: dict[str, set[ScenarioKind]] = {
    "evolve": {
        ScenarioKind.EVOLVE_CLASSICAL,
        ScenarioKind.EVOLVE_QUANTUM,
        ScenarioKind.EVOLVE_MADELUNG,
    },
    "hv": {ScenarioKind.HV_BRANCHES, ScenarioKind.HV_FLIP, ScenarioKind.HV_LAMBDA},
    "pilot": {ScenarioKind.PILOT_WAVE},
    "measure": {ScenarioKind.MEASURE},
    "ordering": {ScenarioKind.ORDERING_REPORT},
}

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvquant", description="Hidden-variable quantization simulator"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, kinds in COMMAND_KINDS.items():
        listed = ", ".join(sorted(k.value for k in kinds))
        p = sub.add_parser(name, help=f"run one {listed} scenario")
        p.add_argument("--config", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", type=Path, help="output directory")

    check = sub.add_parser("check", help="run every bundled acceptance scenario")
    check.add_argument(
        "--scenarios", type=Path, default=Path("scenarios"), help="directory of scenario files"
    )
    check.add_argument("--seed", type=int, help="override every scenario seed")
    check.add_argument(
        "--out", type=Path, help=f"output root (default: {DEFAULT_OUTPUT_ROOT})"
    )
    check.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def _check_worker(args: tuple[Path, Path, int | None, bool]) -> tuple[str, str]:
    path, out_root, seed, verbose = args
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)
    try:
        manifest = run_file(path, out_root, seed)
    except ConfigError as e:
        logger.error(f"{path.name}: {e.message}")
        return path.stem, "error"
    return path.stem, manifest.status


def _single(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error(f"Invalid configuration {args.config}: {e.message}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"Cannot read {args.config}: {e}")
        return EXIT_USAGE
    if cfg.kind not in COMMAND_KINDS[args.command]:
        logger.error(
            f"'{args.command}' cannot run a {cfg.kind.value} scenario; "
            f"expected one of {sorted(k.value for k in COMMAND_KINDS[args.command])}"
        )
        return EXIT_USAGE
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    manifest = run(cfg, args.out, args.config.stem)
    for check in manifest.checks:
        verdict = "PASS" if check.passed else "FAIL"
        print(f"{verdict}  {check.name} = {check.value} (threshold {check.threshold})")
    if manifest.error:
        print(f"ERROR {manifest.error}")
    return EXIT_OK if manifest.status == "pass" else EXIT_FAILED


def _check(args: argparse.Namespace) -> int:
    files = sorted(args.scenarios.glob("*.json"))
    if not files:
        logger.error(f"No scenario files in {args.scenarios}")
        return EXIT_USAGE
    if args.jobs < 1:
        logger.error(f"--jobs must be positive, got {args.jobs}")
        return EXIT_USAGE
    out_root = args.out or Path(DEFAULT_OUTPUT_ROOT)
    tasks = [(path, out_root, args.seed, args.verbose) for path in files]
    logger.info(f"Running {len(files)} scenarios with {args.jobs} worker(s)")

    if args.jobs == 1:
        results = [_check_worker(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_check_worker, tasks))

    width = max(len(name) for name, _ in results)
    for name, status in results:
        print(f"{name:<{width}}  {status}")
    failed = [name for name, status in results if status != "pass"]
    if failed:
        logger.warning(f"{len(failed)} of {len(results)} scenarios did not pass: {failed}")
        return EXIT_FAILED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run, and return the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    if args.command == "check":
        return _check(args)
    return _single(args)
