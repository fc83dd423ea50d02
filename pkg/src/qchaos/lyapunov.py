"""
Largest finite-time Lyapunov exponent.

The tangent vector is carried through the same symplectic map as the
orbit (the exact linearization of each leapfrog stage) and renormalized to
unit length at a fixed cadence, accumulating the log-growth.
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .dynamics import (
    JIT_OPTIONS,
    YOSHIDA_W0,
    YOSHIDA_W1,
    ActionParams,
    IntegratorConfig,
    PhaseState,
    _advance,
    _gradient,
    _hessian,
    _is_finite,
    hessian_potential,
    resolve_steps,
    shell_energy,
)
from .exceptions import DegenerateTangentError, NumericalBlowUpError

logger = logging.getLogger(__name__)

DEFAULT_DIRECTION = (1.0, 0.0, 0.0, 0.0)
DEFAULT_RENORM_EVERY = 100

# Kernel status codes
_OK = 0
_BLOW_UP = 1
_DEGENERATE = 2


@dataclass(frozen=True)
class FtleRecord:
    """One finite-time Lyapunov measurement."""

    initial: PhaseState
    energy: float
    horizon: float
    exponent: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not math.isfinite(self.exponent):
            raise ValueError(f"exponent must be finite, got {self.exponent}")


def jacobian(params: ActionParams, s: PhaseState) -> np.ndarray:
    """
    Linearization of the Hamiltonian flow field at s.

    Args:
        params: Action parameters
        s: Phase-space point

    Returns:
        4x4 matrix in (x, y, px, py) ordering
    """
    hxx, hyy, hxy = hessian_potential(params, s.x, s.y)
    J = np.zeros((4, 4))
    J[0, 2] = J[1, 3] = 1.0 / params.mass
    J[2, 0] = -hxx
    J[2, 1] = J[3, 0] = -hxy
    J[3, 1] = -hyy
    return J


@njit(**JIT_OPTIONS)
def _leapfrog_tangent(p, w, v, h):
    c = 0.5 * h / p[0]
    w[0] += c * w[2]
    w[1] += c * w[3]
    v[0] += c * v[2]
    v[1] += c * v[3]
    gx, gy = _gradient(p, w[0], w[1])
    hxx, hyy, hxy = _hessian(p, w[0], w[1])
    w[2] -= h * gx
    w[3] -= h * gy
    dvx = hxx * v[0] + hxy * v[1]
    dvy = hxy * v[0] + hyy * v[1]
    v[2] -= h * dvx
    v[3] -= h * dvy
    w[0] += c * w[2]
    w[1] += c * w[3]
    v[0] += c * v[2]
    v[1] += c * v[3]


@njit(**JIT_OPTIONS)
def _tangent_step(p, w, v, h, order):
    if order == 4:
        _leapfrog_tangent(p, w, v, YOSHIDA_W1 * h)
        _leapfrog_tangent(p, w, v, YOSHIDA_W0 * h)
        _leapfrog_tangent(p, w, v, YOSHIDA_W1 * h)
    else:
        _leapfrog_tangent(p, w, v, h)


@njit(**JIT_OPTIONS)
def _ftle_kernel(p, w, v, h, order, n_steps, renorm_every):
    log_sum = 0.0
    for k in range(n_steps):
        _tangent_step(p, w, v, h, order)
        if (k + 1) % renorm_every == 0 or k + 1 == n_steps:
            if not _is_finite(w):
                return log_sum, k + 1, _BLOW_UP
            norm = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3])
            if not (norm > 0.0 and np.isfinite(norm)):
                return log_sum, k + 1, _DEGENERATE
            log_sum += math.log(norm)
            for i in range(4):
                v[i] /= norm
    return log_sum, n_steps, _OK


@njit(**JIT_OPTIONS)
def _separation_kernel(p, w, u, h, order, n_steps, renorm_every, d0):
    log_sum = 0.0
    taken = 0
    while taken < n_steps:
        chunk = min(renorm_every, n_steps - taken)
        _advance(p, w, h, order, chunk)
        _advance(p, u, h, order, chunk)
        taken += chunk
        if not (_is_finite(w) and _is_finite(u)):
            return log_sum, taken, _BLOW_UP
        d = 0.0
        for i in range(4):
            d += (u[i] - w[i]) ** 2
        d = math.sqrt(d)
        if not d > 0.0:
            return log_sum, taken, _DEGENERATE
        log_sum += math.log(d / d0)
        for i in range(4):
            u[i] = w[i] + (u[i] - w[i]) * (d0 / d)
    return log_sum, n_steps, _OK


def _unit_direction(direction: Optional[Sequence[float]]) -> np.ndarray:
    v = np.array(DEFAULT_DIRECTION if direction is None else direction, dtype=np.float64)
    if v.shape != (4,):
        raise ValueError(f"Tangent direction must have 4 components, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if not (norm > 0 and math.isfinite(norm)):
        raise DegenerateTangentError(f"Tangent direction {v.tolist()} has no usable norm")
    return v / norm


def random_direction(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit vector in the 4-D tangent space."""
    v = rng.standard_normal(4)
    return v / np.linalg.norm(v)


def _check_status(status: int, w: np.ndarray, t: float) -> None:
    if status == _BLOW_UP:
        raise NumericalBlowUpError(w, t)
    if status == _DEGENERATE:
        raise DegenerateTangentError(f"Tangent norm collapsed at t={t:g}")


def ftle(
    params: ActionParams,
    s0: PhaseState,
    horizon: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    renorm_every: int = DEFAULT_RENORM_EVERY,
    direction: Optional[Sequence[float]] = None
) -> FtleRecord:
    """
    Finite-time Lyapunov exponent by tangent-flow integration.

    Args:
        params: Action parameters
        s0: Initial state
        horizon: Integration time T_c
        cfg: Integrator configuration (used for orbit and tangent alike)
        renorm_every: Base steps between renormalizations
        direction: Initial tangent direction, (1, 0, 0, 0) by default

    Returns:
        FtleRecord carrying the shell energy of s0

    Raises:
        DegenerateTangentError: If the tangent vector is zero or non-finite
        NumericalBlowUpError: If the orbit blows up
    """
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive, got {horizon}")
    if renorm_every < 1:
        raise ValueError(f"renorm_every must be >= 1, got {renorm_every}")

    v = _unit_direction(direction)
    w = s0.as_array()
    n_steps, h = resolve_steps(horizon, cfg.step)
    log_sum, taken, status = _ftle_kernel(
        params.as_array(), w, v, h, cfg.order, n_steps, int(renorm_every)
    )
    _check_status(status, w, taken * h)

    return FtleRecord(
        initial=s0,
        energy=shell_energy(params, s0),
        horizon=horizon,
        exponent=log_sum / horizon,
    )


def two_trajectory_ftle(
    params: ActionParams,
    s0: PhaseState,
    horizon: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    separation: float = 1e-8,
    renorm_every: int = DEFAULT_RENORM_EVERY,
    direction: Optional[Sequence[float]] = None
) -> FtleRecord:
    """
    Finite-time Lyapunov exponent from a neighbouring orbit.

    The neighbour starts at distance `separation` along `direction` and is
    pulled back to that distance every `renorm_every` steps, so the estimate
    never saturates.
    """
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not separation > 0:
        raise ValueError(f"separation must be positive, got {separation}")

    w = s0.as_array()
    u = w + separation * _unit_direction(direction)
    n_steps, h = resolve_steps(horizon, cfg.step)
    log_sum, taken, status = _separation_kernel(
        params.as_array(), w, u, h, cfg.order, n_steps, int(renorm_every), separation
    )
    _check_status(status, w, taken * h)

    return FtleRecord(
        initial=s0,
        energy=shell_energy(params, s0),
        horizon=horizon,
        exponent=log_sum / horizon,
    )
