"""
Poincaré sections.

Oriented crossings of a coordinate plane are detected by a sign change
between consecutive integrator steps. Each crossing is then landed exactly
on the plane with one Hénon step: the section coordinate becomes the
independent variable and the equations of motion are integrated over the
remaining coordinate distance with a single Runge-Kutta step.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numba import njit
from typing_extensions import Literal

from .dynamics import (
    JIT_OPTIONS,
    ActionParams,
    IntegratorConfig,
    PhaseState,
    _gradient,
    _is_finite,
    _step,
)
from .exceptions import NumericalBlowUpError

logger = logging.getLogger(__name__)

DEFAULT_MAX_TIME = 1e6

_AXES = {'x': 0, 'y': 1}


@dataclass(frozen=True)
class SectionSpec:
    """The plane coordinate = value, crossed with conjugate momentum of sign direction."""

    coordinate: Literal['x', 'y'] = 'x'
    value: float = 0.0
    direction: int = 1

    def __post_init__(self):
        if self.coordinate not in _AXES:
            raise ValueError(f"Section coordinate must be 'x' or 'y', got '{self.coordinate}'")
        if self.direction not in (1, -1):
            raise ValueError(f"Section direction must be +1 or -1, got {self.direction}")
        if not math.isfinite(self.value):
            raise ValueError(f"Section value must be finite, got {self.value}")

    @property
    def axis(self) -> int:
        return _AXES[self.coordinate]

    @property
    def in_section_axis(self) -> int:
        return 1 - self.axis


@dataclass(frozen=True)
class CrossingPoint:
    """In-section coordinate a, its momentum pa, and the crossing time."""

    a: float
    pa: float
    t: float


@dataclass
class SectionResult:
    """
    Crossings in time order, the refined states, and whether the time budget ran out.

    `rejected` counts oriented sign changes whose refined state was dropped
    (wrong momentum sign after refinement, or not finite); crossings plus
    rejected equals the number of step-level sign changes.
    """

    crossings: List[CrossingPoint] = field(default_factory=list)
    states: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    truncated: bool = False
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.crossings)

    def as_array(self) -> np.ndarray:
        """Rows of (t, a, pa)."""
        return np.array([[c.t, c.a, c.pa] for c in self.crossings]).reshape(-1, 3)


@njit(**JIT_OPTIONS)
def _section_rhs(p, axis, z, out):
    """d/dq of z = [x, y, px, py, t] where q is the section coordinate."""
    m = p[0]
    dt_dq = m / z[2 + axis]
    gx, gy = _gradient(p, z[0], z[1])
    out[0] = z[2] / m * dt_dq
    out[1] = z[3] / m * dt_dq
    out[2] = -gx * dt_dq
    out[3] = -gy * dt_dq
    out[4] = dt_dq


@njit(**JIT_OPTIONS)
def _henon_step(p, axis, z, dq):
    """One RK4 step of length dq in the section coordinate, in place."""
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    _section_rhs(p, axis, z, k1)
    for i in range(5):
        tmp[i] = z[i] + 0.5 * dq * k1[i]
    _section_rhs(p, axis, tmp, k2)
    for i in range(5):
        tmp[i] = z[i] + 0.5 * dq * k2[i]
    _section_rhs(p, axis, tmp, k3)
    for i in range(5):
        tmp[i] = z[i] + dq * k3[i]
    _section_rhs(p, axis, tmp, k4)
    for i in range(5):
        z[i] += dq * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@njit(**JIT_OPTIONS)
def _section_kernel(p, w, h, order, axis, value, direction, n, max_steps, out):
    """
    Collect up to n crossings into out rows [t, x, y, px, py].

    A sign change whose refined state has the wrong momentum sign or is not
    finite is counted as rejected.

    Returns (count, rejected, steps taken, blown_up).
    """
    count = 0
    rejected = 0
    g_prev = w[axis] - value
    if g_prev == 0.0 and w[2 + axis] * direction > 0.0:
        out[0, 0] = 0.0
        for i in range(4):
            out[0, 1 + i] = w[i]
        count = 1

    z = np.empty(5)
    prev = np.empty(4)
    k = 0
    while count < n and k < max_steps:
        for i in range(4):
            prev[i] = w[i]
        _step(p, w, h, order)
        k += 1
        if not _is_finite(w):
            return count, rejected, k, True
        g = w[axis] - value
        if direction > 0:
            crossed = g_prev < 0.0 and g >= 0.0
        else:
            crossed = g_prev > 0.0 and g <= 0.0
        if crossed:
            for i in range(4):
                z[i] = prev[i]
            z[4] = (k - 1) * h
            _henon_step(p, axis, z, value - prev[axis])
            z[axis] = value
            if z[2 + axis] * direction > 0.0 and _is_finite(z):
                out[count, 0] = z[4]
                for i in range(4):
                    out[count, 1 + i] = z[i]
                count += 1
            else:
                rejected += 1
        g_prev = g
    return count, rejected, k, False


def poincare_map(
    params: ActionParams,
    s0: PhaseState,
    spec: SectionSpec,
    n: int,
    cfg: IntegratorConfig = IntegratorConfig(),
    max_time: float = DEFAULT_MAX_TIME
) -> SectionResult:
    """
    First n oriented crossings of the section.

    A start state lying exactly on the section with correctly signed
    momentum is returned as the crossing at t = 0.

    Args:
        params: Action parameters
        s0: Initial state
        spec: Section definition
        n: Number of crossings wanted (>= 1)
        cfg: Integrator configuration
        max_time: Time budget for the whole map

    Returns:
        SectionResult, with truncated=True if the budget ran out first

    Raises:
        NumericalBlowUpError: If the orbit blows up
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not max_time > 0:
        raise ValueError(f"max_time must be positive, got {max_time}")

    w = s0.as_array()
    out = np.zeros((n, 5))
    max_steps = int(math.ceil(max_time / cfg.step))
    count, rejected, taken, blown_up = _section_kernel(
        params.as_array(), w, cfg.step, cfg.order, spec.axis, float(spec.value),
        float(spec.direction), int(n), max_steps, out
    )
    if blown_up:
        raise NumericalBlowUpError(w, taken * cfg.step)

    rows = out[:count]
    a_col = 1 + spec.in_section_axis
    pa_col = 3 + spec.in_section_axis
    crossings = [CrossingPoint(a=float(r[a_col]), pa=float(r[pa_col]), t=float(r[0])) for r in rows]
    truncated = count < n
    if truncated:
        logger.warning(f"Poincaré map truncated: {count}/{n} crossings within t={max_time:g}")
    if rejected:
        logger.debug(f"{rejected} grazing crossings rejected after refinement")
    return SectionResult(crossings=crossings, states=rows[:, 1:].copy(), truncated=truncated,
                         rejected=int(rejected))
