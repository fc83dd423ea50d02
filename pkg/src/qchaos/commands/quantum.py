"""
Quantum subcommands: propagate and fit-qaction.
"""

import logging

from ..config import ExperimentConfig
from ..propagator import AmplitudeTable, amplitude_table, default_boundary_pairs
from ..qaction import fit, format_fit_report
from ..session import RunSession
from ..workers import WorkerPool

logger = logging.getLogger(__name__)


def _table(config: ExperimentConfig, pool: WorkerPool) -> AmplitudeTable:
    prop = config.propagator
    return amplitude_table(
        config.params, prop.grid, prop.transition_time, default_boundary_pairs(),
        tau=prop.tau, pool=pool, with_ground_state=True,
    )


def propagate_command(config: ExperimentConfig, session: RunSession, pool: WorkerPool) -> None:
    """Amplitude table over the default boundary pairs, with E_gr and T_sc in the header."""
    table = _table(config, pool)
    tag = session.time_tag(config.propagator.transition_time)
    session.write_text(session.file_name(config.system, tag, suffix='txt'), table.to_text())


def fit_qaction_command(config: ExperimentConfig, session: RunSession, pool: WorkerPool) -> None:
    """
    Fit the quantum action to the system's amplitude table.

    Writes the table that was fitted and the report comparing the fitted
    parameters with the action the table came from.
    """
    table = _table(config, pool)
    tag = session.time_tag(config.propagator.transition_time)
    session.write_text(session.file_name(config.system, f"{tag}-table", suffix='txt'), table.to_text())

    result = fit(table, mode=config.fit_mode, pool=pool, n_steps=config.bvp_steps)
    session.write_text(session.file_name(config.system, tag), format_fit_report(result, reference=table.params))
