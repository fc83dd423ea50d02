"""
Commands package for qchaos.
Contains the subcommand handlers and the error handler.
"""

from .chaos import poincare_command, lyap_dist_command, ratio_command
from .quantum import propagate_command, fit_qaction_command
from .errors import error_handler

__all__ = [
    'poincare_command',
    'lyap_dist_command',
    'ratio_command',
    'propagate_command',
    'fit_qaction_command',
    'error_handler',
]
