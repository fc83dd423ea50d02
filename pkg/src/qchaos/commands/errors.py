"""
Error handler for qchaos subcommands.
Logs the failure and leaves a diagnostic file next to the outputs.
"""

import logging
import traceback

from ..session import RunSession

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1


def error_handler(session: RunSession, error: BaseException) -> int:
    """
    Handle an error raised by a subcommand.

    Args:
        session: The run session the subcommand was writing into
        error: The exception

    Returns:
        Exit status for the process
    """
    logger.error(f"{session.subcommand} failed with {type(error).__name__}: {error}", exc_info=error)
    details = ''.join(traceback.format_exception(type(error), error, error.__traceback__))
    try:
        path = session.write_diagnostic(error, details)
        logger.error(f"Diagnostic written to {path}")
    except OSError as e:
        logger.error(f"Could not write diagnostic file: {e}")
    return EXIT_FAILURE
