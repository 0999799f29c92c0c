"""
Utility functions for the CLI interface.
"""

import logging
import os
import sys

from ..core.exceptions import (
    ConfigurationError,
    ContractError,
    GridMismatchError,
    PropagationError,
    SnapshotFormatError,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIGURATION = 2
EXIT_PROPAGATION = 3


def setup_logging(verbose: bool = False) -> None:
    """
    Setup logging configuration.

    Args:
        verbose: Enable debug logging if True
    """
    level = logging.DEBUG if verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def validate_paths(config_path: str, output_dir: str = None) -> bool:
    """
    Check that the experiment file is readable and the output directory writable.

    Returns:
        True if paths are valid, False otherwise (the reason goes to stderr)
    """
    if not os.path.exists(config_path):
        print(f"Error: Experiment file not found: {config_path}", file=sys.stderr)
        return False

    if not os.access(config_path, os.R_OK):
        print(f"Error: Cannot read experiment file: {config_path}", file=sys.stderr)
        return False

    if output_dir:
        if not os.path.exists(output_dir):
            try:
                os.makedirs(output_dir, exist_ok=True)
            except OSError as e:
                print(f"Error: Cannot create output directory: {e}", file=sys.stderr)
                return False

        if not os.access(output_dir, os.W_OK):
            print(f"Error: Cannot write to output directory: {output_dir}", file=sys.stderr)
            return False

    return True


def exit_code_for(error: Exception) -> int:
    """Exit status of a failed command: 2 configuration, 3 propagation, 1 otherwise."""
    if isinstance(error, (ConfigurationError, GridMismatchError, ContractError, SnapshotFormatError)):
        return EXIT_CONFIGURATION
    if isinstance(error, PropagationError):
        return EXIT_PROPAGATION
    return EXIT_CHECK_FAILED


def format_duration(seconds: float) -> str:
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, rest = divmod(seconds, 60)
    return f"{int(minutes)}m {rest:.0f}s"
