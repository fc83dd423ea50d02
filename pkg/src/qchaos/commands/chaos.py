"""
Classical-chaos subcommands: poincare, lyap-dist and ratio.
"""

import logging
from typing import Dict, List

from ..config import ExperimentConfig
from ..dynamics import ActionParams
from ..ensemble import (
    FtleEnsemble,
    ShellSampler,
    chaotic_ratio,
    energy_sweep,
    fit_mean_vs_energy,
    gaussian_summary,
    histogram,
    positive_region_edges,
    zero_region_edges,
)
from ..poincare import poincare_map
from ..session import RunSession
from ..workers import WorkerPool

logger = logging.getLogger(__name__)


def poincare_command(config: ExperimentConfig, session: RunSession, pool: WorkerPool) -> None:
    """
    Section points of `orbits` shell samples per energy.

    Writes one CSV per energy with rows (orbit, t, a, pa), where (a, pa) is
    the in-section coordinate and its momentum.
    """
    params = config.params
    spec = config.section
    in_section = 'xy'[spec.in_section_axis]

    for index, energy in enumerate(config.energies):
        sampler = ShellSampler(params, energy, seed=config.seed, stream=index)
        starts = sampler.samples(config.orbits)
        results = pool.map(
            lambda s: poincare_map(params, s, spec, config.crossings, config.integrator, config.max_time),
            starts,
        )
        rows = []
        for orbit, result in enumerate(results):
            rows.extend((orbit, c.t, c.a, c.pa) for c in result.crossings)
        truncated = sum(1 for r in results if r.truncated)
        if truncated:
            logger.warning(f"{truncated}/{len(results)} orbits at E={energy:g} were truncated")
        rejected = sum(r.rejected for r in results)
        if rejected:
            logger.info(f"E={energy:g}: {rejected} grazing crossings rejected after refinement")
        session.write_csv(
            session.file_name(config.system, session.energy_tag(energy)),
            ('orbit', 't', in_section, f"p{in_section}"),
            rows,
        )


def _sweep(config: ExperimentConfig, params: ActionParams, pool: WorkerPool) -> Dict[float, FtleEnsemble]:
    return energy_sweep(
        params, config.energies, config.n_samples, config.horizon, seed=config.seed,
        cfg=config.integrator, renorm_every=config.renorm_every, pool=pool,
    )


def lyap_dist_command(config: ExperimentConfig, session: RunSession, pool: WorkerPool) -> None:
    """
    Lyapunov distributions per energy.

    Writes one histogram CSV per energy (zero and positive regions, with the
    cumulative fraction at each lower edge), a summary CSV of the chaotic
    subsets, and the linear fit of the mean exponent against energy.
    """
    sweep = _sweep(config, config.params, pool)
    summary_rows = []
    means = []

    for energy, ensemble in sweep.items():
        rows = []
        for region, edges in (('zero', zero_region_edges()), ('positive', positive_region_edges())):
            h = histogram(ensemble.records, edges)
            for j in range(h.counts.size):
                rows.append((region, h.edges[j], h.edges[j + 1], int(h.counts[j]), h.cumulative[j]))
            rows.append((region, 'underflow', '', h.underflow, ''))
            rows.append((region, 'overflow', '', h.overflow, ''))
        session.write_csv(
            session.file_name(config.system, session.energy_tag(energy)),
            ('region', 'lower', 'upper', 'count', 'cumulative'),
            rows,
        )

        ratio = chaotic_ratio(ensemble.records, config.lambda_c, energy=energy)
        try:
            g = gaussian_summary(ensemble.records, config.lambda_c)
            moments = (g.n, g.mean, g.variance, g.skewness, g.excess_kurtosis)
            means.append((energy, g.mean))
        except ValueError as e:
            logger.warning(f"No Gaussian summary at E={energy:g}: {e}")
            moments = (0, float('nan'), float('nan'), float('nan'), float('nan'))
        summary_rows.append((energy, len(ensemble.records), len(ensemble.failures), ratio.ratio) + moments)

    session.write_csv(
        session.file_name(config.system, 'summary'),
        ('energy', 'records', 'failures', 'ratio', 'chaotic', 'mean', 'variance', 'skewness', 'excess_kurtosis'),
        summary_rows,
    )
    if len({e for e, _ in means}) >= 2:
        line = fit_mean_vs_energy(means)
        session.write_csv(
            session.file_name(config.system, 'slope'),
            ('lambda0', 'eps', 'residual'),
            [(line.lambda0, line.eps, line.residual)],
        )
    else:
        logger.warning("Fewer than two energies with chaotic records; slope not fitted")


def ratio_command(config: ExperimentConfig, session: RunSession, pool: WorkerPool) -> None:
    """
    Chaotic ratio of the classical action against the quantum action.

    Both systems are swept with the same seed, so energy i draws from the
    same sampling stream for either action.
    """
    systems: List[str] = ['classical', 'quantum']
    ratios = {}
    for system in systems:
        logger.info(f"Sweeping the {system} action")
        sweep = _sweep(config, config.params_for(system), pool)
        ratios[system] = {
            energy: chaotic_ratio(ensemble.records, config.lambda_c, energy=energy)
            for energy, ensemble in sweep.items()
        }

    rows = []
    for energy in config.energies:
        cl = ratios['classical'][float(energy)]
        qm = ratios['quantum'][float(energy)]
        rows.append((energy, cl.ratio, cl.standard_error, qm.ratio, qm.standard_error, cl.n, qm.n))
        if not cl.ratio > qm.ratio:
            logger.warning(f"R_classical={cl.ratio:g} does not exceed R_quantum={qm.ratio:g} at E={energy:g}")
    session.write_csv(
        session.file_name('-'.join(systems), 'sweep'),
        ('energy', 'R_classical', 'se_classical', 'R_quantum', 'se_quantum', 'n_classical', 'n_quantum'),
        rows,
    )
