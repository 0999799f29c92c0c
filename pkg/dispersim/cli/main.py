"""
Command Line Interface for dispersim

Runs experiment files, validates them, and lists admissible exponent pairs.
"""

import argparse
import sys

from ..core.config import get_config
from ..core.exceptions import DispersimError
from ..core.experiment import load_experiment_config, run_experiment
from ..core.fieldgrid import list_admissible_pairs
from ..core.model import validate_model
from .utils import EXIT_OK, exit_code_for, format_duration, setup_logging, validate_paths


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser."""
    parser = argparse.ArgumentParser(
        prog='dispersim',
        description='Pseudospectral charge transfer simulator and estimate verification harness',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  dispersim run free_gaussian_1d.json --out runs/free
  dispersim run two_well_3d.json --threads 8
  dispersim validate two_well_1d.json
  dispersim pairs --dim 3 --count 4

Exit status: 0 all checks passed, 1 a check is hard-flagged,
2 invalid configuration, 3 propagation failure.
        """
    )

    parser.add_argument(
        '-v', '--verbose',
        action='store_true',
        help='Enable verbose output and progress bars'
    )

    parser.add_argument(
        '-c', '--config',
        help='Path to a settings file (JSON or YAML)'
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    run_parser = subparsers.add_parser(
        'run',
        help='Run an experiment file'
    )
    run_parser.add_argument('experiment', help='Experiment file (JSON or YAML)')
    run_parser.add_argument('--out', help='Output directory (overrides the experiment file)')
    run_parser.add_argument('--threads', type=int, help='FFT and batch workers (DISPERSIM_THREADS wins)')
    run_parser.add_argument(
        '--dry-run',
        action='store_true',
        help='Validate and plan without propagating or writing files'
    )

    validate_parser = subparsers.add_parser(
        'validate',
        help='Validate an experiment file and its model'
    )
    validate_parser.add_argument('experiment', help='Experiment file (JSON or YAML)')

    pairs_parser = subparsers.add_parser(
        'pairs',
        help='List Schroedinger admissible pairs'
    )
    pairs_parser.add_argument('--dim', type=int, required=True, choices=[1, 2, 3], help='Space dimension')
    pairs_parser.add_argument('--count', type=int, default=4, help='Number of pairs')

    return parser


def handle_run(args) -> int:
    """Handle the run command."""
    try:
        if not validate_paths(args.experiment, args.out):
            return 2

        result = run_experiment(args.experiment, out_dir=args.out, threads=args.threads,
                                dry_run=args.dry_run, progress=args.verbose)
        manifest = result.manifest

        if args.dry_run:
            print(f"Configuration valid; {len(manifest.checks)} checks planned")
            return EXIT_OK

        for name, summary in manifest.checks.items():
            status = 'passed' if summary.get('passed') else 'FLAGGED'
            flags = ', '.join(summary.get('flags', [])) or 'none'
            print(f"{name:<28} {status:<8} flags: {flags}")
        print(f"Results written to {result.output_dir} in {format_duration(manifest.wall_clock)}")
        return result.exit_status

    except DispersimError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        return 1


def handle_validate(args) -> int:
    """Handle the validate command."""
    try:
        if not validate_paths(args.experiment):
            return 2

        config = load_experiment_config(args.experiment)
        model = config.build_model()
        print(f"Experiment '{config.name}': {config.kind} model, grid n={config.grid.dimension} "
              f"N={config.grid.points} L={config.grid.length}, {len(config.checks)} checks")
        if config.potentials:
            report = validate_model(model)
            print(f"Wrap-safe horizon: {report.horizon:.4g}")
            for warning in report.warnings:
                print(f"Warning: {warning}")
        print("Configuration valid")
        return EXIT_OK

    except DispersimError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        return 1


def handle_pairs(args) -> int:
    """Handle the pairs command."""
    try:
        for pair in list_admissible_pairs(args.dim, args.count):
            print(pair.label)
        return EXIT_OK
    except DispersimError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)


def main(argv=None) -> int:
    """Main entry point for the CLI application."""
    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging(args.verbose)

    try:
        get_config(args.config)
    except DispersimError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)

    if args.command == 'run':
        return handle_run(args)
    elif args.command == 'validate':
        return handle_validate(args)
    elif args.command == 'pairs':
        return handle_pairs(args)
    else:
        parser.print_help()
        return 1


if __name__ == '__main__':
    sys.exit(main())
