"""
Energy-shell ensembles and their Lyapunov statistics.

Initial conditions are drawn on a fixed-energy shell, one finite-time
Lyapunov exponent is measured per trajectory, and the resulting
distribution is summarized: histograms with a cumulative curve, the
chaotic ratio above a cut-off, moments of the chaotic subset, and the
linear fit of the mean exponent against energy.
"""

import math
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .dynamics import ActionParams, IntegratorConfig, PhaseState, potential
from .exceptions import QChaosError, SamplingError
from .lyapunov import DEFAULT_RENORM_EVERY, FtleRecord, ftle

logger = logging.getLogger(__name__)

MAX_PROPOSALS = 10_000_000
MIN_ACCEPTANCE = 1e-6
_BATCH = 256


def accessible_half_width(params: ActionParams, energy: float) -> float:
    """
    Smallest L with V(L, 0) - v0 > energy.

    Solves v4 L^4 + v2 L^2 = energy for L^2 and nudges the root upward.
    """
    if params.v4 == 0.0:
        u = energy / params.v2
    else:
        disc = params.v2 * params.v2 + 4.0 * params.v4 * energy
        if disc < 0:
            raise SamplingError(
                f"Energy {energy:g} exceeds the barrier of the quartic term (v4={params.v4:g})"
            )
        u = (-params.v2 + math.sqrt(disc)) / (2.0 * params.v4)
    L = math.sqrt(u)
    while potential(params, L, 0.0) - params.v0 <= energy:
        L = np.nextafter(L, np.inf)
    return float(L)


class ShellSampler:
    """
    Seeded sampler of states with H - v0 = energy.

    Positions are uniform over {V - v0 <= E} within the box [-L, L]^2, the
    momentum magnitude is fixed by the energy and its direction is uniform.
    """

    def __init__(
        self,
        params: ActionParams,
        energy: float,
        seed: int = 0,
        box: Optional[float] = None,
        stream: int = 0
    ):
        """
        Initialize the sampler.

        Args:
            params: Action parameters
            energy: Shell energy excluding v0 (> 0)
            seed: 64-bit reproducibility seed
            box: Sampling half-width; defaults to the accessible half-width
            stream: Independent sub-stream index for the same seed
        """
        if not energy > 0:
            raise ValueError(f"energy must be positive, got {energy}")
        self.params = params
        self.energy = float(energy)
        self.seed = int(seed)
        self.stream = int(stream)
        self.box = float(box) if box is not None else accessible_half_width(params, energy)
        if not self.box > 0:
            raise ValueError(f"box must be positive, got {self.box}")
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))
        self._accepted: Deque[Tuple[float, float, float]] = deque()
        self.proposals = 0

    def sample(self) -> PhaseState:
        """
        Draw one state on the shell.

        Positions come from batches of proposals; every accepted position of
        a batch is queued and used in order before a new batch is drawn.

        Raises:
            SamplingError: If acceptance stays below 1e-6 over 1e7 proposals
        """
        p = self.params
        L = self.box
        proposals = 0
        while not self._accepted:
            if proposals >= MAX_PROPOSALS:
                raise SamplingError(
                    f"Acceptance below {MIN_ACCEPTANCE:g} after {proposals} proposals; box {L:g} is mis-sized"
                )
            xy = self._rng.uniform(-L, L, size=(_BATCH, 2))
            proposals += _BATCH
            self.proposals += _BATCH
            dv = potential(p, xy[:, 0], xy[:, 1]) - p.v0
            inside = dv <= self.energy
            self._accepted.extend(zip(xy[inside, 0].tolist(), xy[inside, 1].tolist(), dv[inside].tolist()))

        x, y, dv = self._accepted.popleft()
        kinetic = self.energy - dv
        momentum = math.sqrt(2.0 * p.mass * kinetic)
        angle = self._rng.uniform(0.0, 2.0 * math.pi)
        return PhaseState(x, y, momentum * math.cos(angle), momentum * math.sin(angle))

    def samples(self, n: int) -> List[PhaseState]:
        return [self.sample() for _ in range(n)]


def sample_shell(sampler: ShellSampler) -> PhaseState:
    """Draw the next state from a shell sampler."""
    return sampler.sample()


@dataclass(frozen=True)
class FailedTrajectory:
    """An ensemble member whose exponent could not be measured."""

    index: int
    initial: PhaseState
    reason: str


@dataclass
class FtleEnsemble:
    """Exponents measured on one energy shell, in sampling order."""

    energy: float
    records: List[FtleRecord] = field(default_factory=list)
    failures: List[FailedTrajectory] = field(default_factory=list)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([r.exponent for r in self.records])


@dataclass(frozen=True)
class _FtleJob:
    index: int
    params: ActionParams
    initial: PhaseState
    horizon: float
    cfg: IntegratorConfig
    renorm_every: int


def _run_job(job: _FtleJob):
    try:
        return ftle(job.params, job.initial, job.horizon, job.cfg, job.renorm_every)
    except QChaosError as e:
        return FailedTrajectory(index=job.index, initial=job.initial, reason=str(e))


def ftle_ensemble(
    params: ActionParams,
    energy: float,
    n: int,
    horizon: float,
    seed: int = 0,
    cfg: IntegratorConfig = IntegratorConfig(),
    renorm_every: int = DEFAULT_RENORM_EVERY,
    stream: int = 0,
    pool=None
) -> FtleEnsemble:
    """
    Measure n exponents from independent shell samples.

    Initial states are drawn sequentially from one seeded sampler before any
    trajectory runs, and results are collected in sampling order, so the
    output does not depend on the number of workers.

    Args:
        params: Action parameters
        energy: Shell energy excluding v0
        n: Ensemble size (>= 1)
        horizon: Integration time per trajectory
        seed: Sampling seed
        cfg: Integrator configuration
        renorm_every: Tangent renormalization cadence in steps
        stream: Sampling sub-stream index
        pool: WorkerPool; the global pool by default

    Returns:
        FtleEnsemble with failed trajectories kept apart
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if pool is None:
        from .workers import get_worker_pool
        pool = get_worker_pool()

    sampler = ShellSampler(params, energy, seed=seed, stream=stream)
    jobs = [
        _FtleJob(index=i, params=params, initial=s, horizon=horizon, cfg=cfg, renorm_every=renorm_every)
        for i, s in enumerate(sampler.samples(n))
    ]
    logger.info(f"Running {n} trajectories at E={energy:g} (T_c={horizon:g}) on {pool.threads} threads")

    ensemble = FtleEnsemble(energy=float(energy))
    for result in pool.map(_run_job, jobs):
        if isinstance(result, FailedTrajectory):
            logger.warning(f"Trajectory {result.index} at E={energy:g} failed: {result.reason}")
            ensemble.failures.append(result)
        else:
            ensemble.records.append(result)

    logger.info(f"✓ E={energy:g}: {len(ensemble.records)} records, {len(ensemble.failures)} failures")
    return ensemble


def energy_sweep(
    params: ActionParams,
    energies: Sequence[float],
    n: int,
    horizon: float,
    seed: int = 0,
    cfg: IntegratorConfig = IntegratorConfig(),
    renorm_every: int = DEFAULT_RENORM_EVERY,
    pool=None
) -> Dict[float, FtleEnsemble]:
    """
    Run ftle_ensemble on each energy.

    Energy i uses sampling stream i of the seed, so two systems swept with
    the same seed and energies draw from the same streams.
    """
    return {
        float(energy): ftle_ensemble(
            params, energy, n, horizon, seed=seed, cfg=cfg,
            renorm_every=renorm_every, stream=index, pool=pool
        )
        for index, energy in enumerate(energies)
    }


def _exponents(records) -> np.ndarray:
    return np.array([r.exponent if isinstance(r, FtleRecord) else float(r) for r in records], dtype=float)


@dataclass
class LyapunovHistogram:
    """Binned exponents with the cumulative fraction below each edge."""

    edges: np.ndarray
    counts: np.ndarray
    cumulative: np.ndarray
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def zero_region_edges() -> np.ndarray:
    """Width-2e-4 bins on [-0.004, 0.02) for the peak at zero."""
    return np.linspace(-0.004, 0.02, 121)


def positive_region_edges() -> np.ndarray:
    """Width-5e-3 bins on [0, 0.25) for the chaotic bulk."""
    return np.linspace(0.0, 0.25, 51)


def histogram(records, edges: Sequence[float]) -> LyapunovHistogram:
    """
    Histogram of exponents.

    Bins are half-open [e_i, e_i+1). Exponents below the first edge count as
    underflow and those at or above the last edge as overflow. cumulative[j]
    is the fraction of all records with exponent below edges[j].

    Args:
        records: FtleRecords or plain exponents
        edges: Strictly increasing bin boundaries, at least two

    Returns:
        LyapunovHistogram
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("histogram needs at least two edges")
    if not np.all(np.diff(edges) > 0):
        raise ValueError("histogram edges must be strictly increasing")

    lam = _exponents(records)
    n_bins = edges.size - 1
    index = np.searchsorted(edges, lam, side='right') - 1
    inside = (index >= 0) & (index < n_bins)
    counts = np.bincount(index[inside], minlength=n_bins).astype(int)
    underflow = int(np.count_nonzero(index < 0))
    overflow = int(np.count_nonzero(index >= n_bins))

    if lam.size:
        cumulative = np.searchsorted(np.sort(lam), edges, side='left') / lam.size
    else:
        cumulative = np.zeros(edges.size)

    return LyapunovHistogram(edges=edges, counts=counts, cumulative=cumulative,
                             underflow=underflow, overflow=overflow)


@dataclass(frozen=True)
class ChaoticRatio:
    """Fraction R of records above the cut-off lambda_c."""

    energy: float
    ratio: float
    n: int
    lambda_c: float

    @property
    def standard_error(self) -> float:
        """Binomial standard error of R."""
        return math.sqrt(self.ratio * (1.0 - self.ratio) / self.n)


def chaotic_ratio(records, lambda_c: float, energy: Optional[float] = None) -> ChaoticRatio:
    """
    R = #{lambda > lambda_c} / n.

    Raises:
        ValueError: If records is empty
    """
    records = list(records)
    if not records:
        raise ValueError("chaotic_ratio needs at least one record")
    lam = _exponents(records)
    if energy is None:
        energy = records[0].energy if isinstance(records[0], FtleRecord) else float('nan')
    chaotic = int(np.count_nonzero(lam > lambda_c))
    return ChaoticRatio(energy=float(energy), ratio=chaotic / lam.size, n=int(lam.size), lambda_c=float(lambda_c))


@dataclass(frozen=True)
class GaussianSummary:
    """Moments of the chaotic subset."""

    mean: float
    variance: float
    n: int
    skewness: float
    excess_kurtosis: float


def gaussian_summary(records, lambda_c: float) -> GaussianSummary:
    """
    Sample mean and unbiased variance of the exponents above lambda_c.

    Skewness and excess kurtosis (both zero for a Gaussian) are reported
    alongside; they are nan for fewer than three points or a constant subset.

    Raises:
        ValueError: If fewer than two records lie above the cut-off
    """
    lam = _exponents(records)
    chaotic = lam[lam > lambda_c]
    if chaotic.size < 2:
        raise ValueError(f"gaussian_summary needs at least 2 chaotic records, got {chaotic.size}")

    variance = float(np.var(chaotic, ddof=1))
    if chaotic.size >= 3 and variance > 0:
        skewness = float(stats.skew(chaotic, bias=False))
        kurtosis = float(stats.kurtosis(chaotic, fisher=True, bias=False)) if chaotic.size >= 4 else float('nan')
    else:
        skewness = kurtosis = float('nan')
    return GaussianSummary(
        mean=float(np.mean(chaotic)),
        variance=variance,
        n=int(chaotic.size),
        skewness=skewness,
        excess_kurtosis=kurtosis,
    )


@dataclass(frozen=True)
class LinearFit:
    """<lambda> = lambda0 + eps * E."""

    lambda0: float
    eps: float
    residual: float

    def __call__(self, energy: float) -> float:
        return self.lambda0 + self.eps * energy


def fit_mean_vs_energy(points: Sequence[Tuple[float, float]]) -> LinearFit:
    """
    Ordinary least-squares line through (E, mean exponent) points.

    Raises:
        ValueError: If fewer than two distinct energies are given
    """
    data = np.asarray(points, dtype=float).reshape(-1, 2)
    energies, means = data[:, 0], data[:, 1]
    if np.unique(energies).size < 2:
        raise ValueError("fit_mean_vs_energy needs at least two distinct energies")

    design = np.column_stack([np.ones_like(energies), energies])
    (lambda0, eps), *_ = np.linalg.lstsq(design, means, rcond=None)
    residual = float(np.sqrt(np.mean((design @ np.array([lambda0, eps]) - means) ** 2)))
    return LinearFit(lambda0=float(lambda0), eps=float(eps), residual=residual)
