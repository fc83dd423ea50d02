"""
Command-line front end for qchaos.
Parses arguments, loads the experiment configuration and dispatches to the
subcommand handlers.
"""

import sys
import logging
import argparse
from typing import Callable, Dict, List, Optional

from . import __version__
from .config import ExperimentConfig, load_config, settings
from .exceptions import ConfigError
from .commands import (
    poincare_command,
    lyap_dist_command,
    ratio_command,
    propagate_command,
    fit_qaction_command,
    error_handler,
)
from .session import RunSession
from .workers import WorkerPool, get_worker_pool

# Configure logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, settings.log_level, logging.INFO)
)
logger = logging.getLogger(__name__)

EXIT_USAGE = 2

Command = Callable[[ExperimentConfig, RunSession, WorkerPool], None]

COMMANDS: Dict[str, Command] = {
    'poincare': poincare_command,
    'lyap-dist': lyap_dist_command,
    'ratio': ratio_command,
    'fit-qaction': fit_qaction_command,
    'propagate': propagate_command,
}

HELP = {
    'poincare': "Poincaré section points for shell samples at each energy",
    'lyap-dist': "Lyapunov exponent distributions, moments and slope against energy",
    'ratio': "Chaotic phase-space ratio, classical against quantum action",
    'fit-qaction': "Fit the quantum action to imaginary-time amplitudes",
    'propagate': "Tabulate imaginary-time amplitudes over the default boundary pairs",
}


def run(
    config: ExperimentConfig,
    subcommand: str,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None
) -> int:
    """
    Run one subcommand and write its outputs and manifest.

    Args:
        config: Resolved configuration
        subcommand: One of COMMANDS
        out_dir: Output directory override
        threads: Worker count; QCHAOS_THREADS or the CPU count if None

    Returns:
        Exit status: 0 on success, 1 if the subcommand failed
    """
    if subcommand not in COMMANDS:
        raise ValueError(f"Unknown subcommand '{subcommand}'")

    session = RunSession(subcommand, config, out_dir)
    pool = get_worker_pool(threads)
    logger.info(f"Running {subcommand} for the {config.system} system (seed {config.seed})")
    try:
        COMMANDS[subcommand](config, session, pool)
        session.write_manifest()
    except Exception as e:
        return error_handler(session, e)
    logger.info(f"✓ {subcommand} finished: {len(session.files)} files in {session.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='qchaos',
        description="Classical versus quantum-action chaos in a coupled anharmonic oscillator",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='subcommand', required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=HELP[name])
        sub.add_argument('--config', required=True, help="experiment configuration file")
        sub.add_argument('--seed', type=int, default=None, help="override the configured seed")
        sub.add_argument('--threads', type=int, default=None, help="worker threads (default: QCHAOS_THREADS or CPU count)")
        sub.add_argument('--out', default=None, help="output directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the qchaos command."""
    args = build_parser().parse_args(argv)

    if args.threads is not None and args.threads < 1:
        logger.error(f"--threads must be >= 1, got {args.threads}")
        return EXIT_USAGE
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
    except (OSError, ConfigError) as e:
        logger.error(f"Invalid configuration {args.config}: {e}")
        return EXIT_USAGE

    return run(config, args.subcommand, out_dir=args.out, threads=args.threads)


if __name__ == '__main__':
    sys.exit(main())
