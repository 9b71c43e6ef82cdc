#!/usr/bin/env python3
"""
Command-line entry point for submanifold averaging scenarios
and the closed-form constant chain
"""

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

import pandas as pd

# Add the project root to the Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from app.core.config import settings
from app.core.exceptions import DomainError
from app.services import constants_service
from app.services.scenario_runner import EXIT_CONFIG, EXIT_OK, run_scenario


def parse_epsilon(text: str) -> float:
    """Accepts decimals and fractions such as 1/70000."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text}")


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run_command(args: argparse.Namespace) -> int:
    outcome = run_scenario(
        args.scenario,
        overrides=args.override,
        output=args.output,
        threads=args.threads,
        seed=args.seed,
    )
    report = outcome.report
    print(f"Scenario: {report.scenario}")
    if report.epsilon_measured is not None:
        print(f"   eps measured: {report.epsilon_measured:.6e}")
    if report.flow is not None:
        print(f"   isotropy defect (L): {report.flow.isotropy_defect:.3e}")
        print(f"   max displacement:    {report.flow.max_displacement:.3e}")
    for verifier in report.verifiers:
        print(
            f"   {verifier.name}: {verifier.status} "
            f"({verifier.trials} trials, {verifier.rejections} rejected, {len(verifier.failures)} failures)"
        )
    if report.error is not None:
        constant = f" [{report.error.constant}]" if report.error.constant else ""
        print(f"\n❌ {report.error.kind}{constant}: {report.error.message}")
    print(f"\nStatus: {report.status}, exit code {outcome.exit_code}, output in {outcome.output_dir}")
    return outcome.exit_code


def constants_command(args: argparse.Namespace) -> int:
    if args.sweep:
        frame = constants_service.sweep(count=args.count, upper=args.upper)
        if args.output:
            frame.to_csv(args.output, index=False, float_format="%.17g")
            print(f"Sweep written to {args.output}")
        else:
            frame.to_csv(sys.stdout, index=False, float_format="%.17g")
        crossing = constants_service.containment_crossing(upper=args.upper)
        print(f"# containment crossing eps* = {crossing:.10e}", file=sys.stderr)
        return EXIT_OK
    if args.epsilon is None:
        print("❌ Error: an epsilon is required unless --sweep is given", file=sys.stderr)
        return EXIT_CONFIG
    try:
        table = constants_service.constants(args.epsilon, args.length)
    except DomainError as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    values = table.as_dict()
    thresholds = values.pop("thresholds")
    with pd.option_context("display.float_format", "{:.10g}".format):
        print(pd.Series(values, dtype=object).to_string())
        if args.thresholds:
            print()
            print(pd.Series(thresholds).to_string())
    verdict = "PASS" if table.containment else "FAIL"
    print(f"\nContainment 842 eps < R(eps, L_eps): {verdict}")
    return EXIT_OK


def main() -> int:
    parser = argparse.ArgumentParser(
        description="Averaging of nearby submanifolds and isotropic averages",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_scenario.py run --scenario scenarios/identity.json
  python run_scenario.py run --scenario scenarios/flat_parallel.json --threads 4 --output runs/flat
  python run_scenario.py run --scenario scenarios/sphere_latitudes.json --override solver.flow_steps=64
  python run_scenario.py constants 1/70000
  python run_scenario.py constants --sweep > sweep.csv

Exit codes:
  0  every asserted bound passed (or was inconclusive)
  1  at least one bound FAILed
  2  invalid scenario, override or output directory
  3  numeric abort (degenerate omega_t or a trajectory leaving the tube)
        """,
    )
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    # Run command
    run_parser = subparsers.add_parser("run", help="Run a scenario file")
    run_parser.add_argument("--scenario", required=True, help="Path to the scenario JSON file")
    run_parser.add_argument("--output", help="Output directory (default: <output_dir>/<scenario name>)")
    run_parser.add_argument("--threads", type=int, help="Worker threads for fibers, trajectories and trials")
    run_parser.add_argument("--seed", type=int, help="Verifier seed")
    run_parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dot-path override into the scenario, value decoded as JSON when possible",
    )

    # Constants command
    constants_parser = subparsers.add_parser("constants", help="Print the constant chain at one epsilon")
    constants_parser.add_argument("epsilon", nargs="?", type=parse_epsilon, help="Family size, e.g. 1/70000")
    constants_parser.add_argument("--length", type=float, help="Tube length L (default: L_eps)")
    constants_parser.add_argument("--thresholds", action="store_true", help="Also print the threshold constants")
    constants_parser.add_argument("--sweep", action="store_true", help="CSV of (eps, 842 eps, R(eps, L_eps))")
    constants_parser.add_argument("--count", type=int, default=201, help="Sweep grid size")
    constants_parser.add_argument("--upper", type=float, default=2e-5, help="Largest epsilon of the sweep")
    constants_parser.add_argument("--output", help="Write the sweep CSV to this file")

    args = parser.parse_args()
    configure_logging(args.log_level)

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    if args.command == "run":
        return run_command(args)
    return constants_command(args)


if __name__ == "__main__":
    sys.exit(main())
