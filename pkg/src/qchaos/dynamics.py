"""
Dynamics core for the anharmonically coupled oscillator.

Defines the action family
    V(x, y) = v0 + v2 (x^2 + y^2) + v22 x^2 y^2 + v4 (x^4 + y^4)
with kinetic term p^2 / (2m), and evolves phase-space states with
position-Verlet leapfrog or its 4th-order triple-jump composition.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from typing_extensions import Literal

from .exceptions import NumericalBlowUpError

logger = logging.getLogger(__name__)

# Shared by every compiled kernel in the package; kernels must be callable
# from worker threads without holding the GIL.
JIT_OPTIONS = {
    'nogil': True,
    'cache': False,
}

Scheme = Literal['leapfrog', 'yoshida4']
SCHEMES = ('leapfrog', 'yoshida4')

_CBRT2 = 2.0 ** (1.0 / 3.0)
YOSHIDA_W1 = 1.0 / (2.0 - _CBRT2)
YOSHIDA_W0 = -_CBRT2 / (2.0 - _CBRT2)

PARAM_NAMES = ('mass', 'v0', 'v2', 'v22', 'v4')


@dataclass(frozen=True)
class ActionParams:
    """The five parameters of a classical or quantum action."""

    mass: float = 1.0
    v0: float = 0.0
    v2: float = 0.5
    v22: float = 0.25
    v4: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.v2 <= 0:
            raise ValueError(f"v2 must be positive (confining), got {self.v2}")

    @classmethod
    def classical(cls, v22: float = 0.25) -> 'ActionParams':
        """Classical action {m=1, v0=0, v2=0.5, v22, v4=0}."""
        return cls(mass=1.0, v0=0.0, v2=0.5, v22=v22, v4=0.0)

    @classmethod
    def quantum(cls) -> 'ActionParams':
        """Quantum action fitted at v22 = 0.25, T = 4.5."""
        return cls(mass=0.976, v0=1.3992, v2=0.5684, v22=0.2469, v4=-0.00067)

    @classmethod
    def harmonic(cls) -> 'ActionParams':
        """Two decoupled oscillators with unit frequency."""
        return cls.classical(v22=0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ActionParams':
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.mass, self.v0, self.v2, self.v22, self.v4], dtype=np.float64)

    def replace(self, **changes) -> 'ActionParams':
        return replace(self, **changes)

    @property
    def omega(self) -> float:
        """Small-oscillation frequency sqrt(2 v2 / m)."""
        return math.sqrt(2.0 * self.v2 / self.mass)


@dataclass(frozen=True)
class PhaseState:
    """A point (x, y, px, py) in phase space."""

    x: float
    y: float
    px: float
    py: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.px, self.py)):
            raise ValueError(f"PhaseState components must be finite: {self}")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'PhaseState':
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.px, self.py], dtype=np.float64)

    def reversed(self) -> 'PhaseState':
        """Same position, negated momenta."""
        return PhaseState(self.x, self.y, -self.px, -self.py)


@dataclass(frozen=True)
class IntegratorConfig:
    """Time step and composition scheme."""

    step: float = 1e-3
    scheme: Scheme = 'yoshida4'

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValueError(f"step must be positive, got {self.step}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme '{self.scheme}', expected one of {SCHEMES}")

    @property
    def order(self) -> int:
        return 4 if self.scheme == 'yoshida4' else 2


# The formulas are written once in plain arithmetic; they work on floats and
# numpy arrays from Python and are compiled below for use inside kernels.
# p = [m, v0, v2, v22, v4]

def _potential_formula(p, x, y):
    x2 = x * x
    y2 = y * y
    return p[1] + p[2] * (x2 + y2) + p[3] * x2 * y2 + p[4] * (x2 * x2 + y2 * y2)


def _gradient_formula(p, x, y):
    x2 = x * x
    y2 = y * y
    gx = 2.0 * p[2] * x + 2.0 * p[3] * x * y2 + 4.0 * p[4] * x * x2
    gy = 2.0 * p[2] * y + 2.0 * p[3] * x2 * y + 4.0 * p[4] * y * y2
    return gx, gy


def _hessian_formula(p, x, y):
    x2 = x * x
    y2 = y * y
    hxx = 2.0 * p[2] + 2.0 * p[3] * y2 + 12.0 * p[4] * x2
    hyy = 2.0 * p[2] + 2.0 * p[3] * x2 + 12.0 * p[4] * y2
    hxy = 4.0 * p[3] * x * y
    return hxx, hyy, hxy


_potential = njit(**JIT_OPTIONS)(_potential_formula)
_gradient = njit(**JIT_OPTIONS)(_gradient_formula)
_hessian = njit(**JIT_OPTIONS)(_hessian_formula)


@njit(**JIT_OPTIONS)
def _is_finite(w):
    for i in range(w.shape[0]):
        if not np.isfinite(w[i]):
            return False
    return True


@njit(**JIT_OPTIONS)
def _leapfrog(p, w, h):
    """Drift-kick-drift on w = [x, y, px, py], in place."""
    c = 0.5 * h / p[0]
    w[0] += c * w[2]
    w[1] += c * w[3]
    gx, gy = _gradient(p, w[0], w[1])
    w[2] -= h * gx
    w[3] -= h * gy
    w[0] += c * w[2]
    w[1] += c * w[3]


@njit(**JIT_OPTIONS)
def _step(p, w, h, order):
    if order == 4:
        _leapfrog(p, w, YOSHIDA_W1 * h)
        _leapfrog(p, w, YOSHIDA_W0 * h)
        _leapfrog(p, w, YOSHIDA_W1 * h)
    else:
        _leapfrog(p, w, h)


@njit(**JIT_OPTIONS)
def _advance(p, w, h, order, n_steps):
    """Advance w by n_steps; returns the number of steps taken before a blow-up."""
    for k in range(n_steps):
        _step(p, w, h, order)
        if not _is_finite(w):
            return k + 1
    return n_steps


def resolve_steps(duration: float, step: float) -> Tuple[int, float]:
    """
    Split a duration into ceil(duration / step) uniform steps.

    Args:
        duration: Total time (> 0)
        step: Requested maximum step

    Returns:
        Tuple of (number of steps, uniform step size)
    """
    n = max(1, int(math.ceil(duration / step - 1e-9)))
    return n, duration / n


def potential(params: ActionParams, x, y):
    """V(x, y) including the v0 offset. Accepts floats or numpy arrays."""
    return _potential_formula(params.as_array(), x, y)


def grad_potential(params: ActionParams, x, y):
    """(dV/dx, dV/dy). Accepts floats or numpy arrays."""
    return _gradient_formula(params.as_array(), x, y)


def hessian_potential(params: ActionParams, x, y):
    """(d2V/dx2, d2V/dy2, d2V/dxdy)."""
    return _hessian_formula(params.as_array(), x, y)


def total_energy(params: ActionParams, s: PhaseState) -> float:
    """Kinetic plus potential energy, v0 included."""
    kinetic = (s.px * s.px + s.py * s.py) / (2.0 * params.mass)
    return kinetic + potential(params, s.x, s.y)


def shell_energy(params: ActionParams, s: PhaseState) -> float:
    """Dynamical energy H - v0."""
    return total_energy(params, s) - params.v0


def step(params: ActionParams, s: PhaseState, cfg: IntegratorConfig) -> PhaseState:
    """
    Advance a state by one symplectic step.

    Raises:
        NumericalBlowUpError: If the new state is not finite
    """
    w = s.as_array()
    _step(params.as_array(), w, cfg.step, cfg.order)
    if not np.all(np.isfinite(w)):
        raise NumericalBlowUpError(w, cfg.step)
    return PhaseState.from_array(w)


def integrate(
    params: ActionParams,
    s0: PhaseState,
    t_end: float,
    cfg: IntegratorConfig,
    consumer: Optional[Callable[[float, PhaseState], None]] = None
) -> PhaseState:
    """
    Integrate from s0 up to t_end.

    The interval is covered by ceil(t_end / cfg.step) uniform steps so the
    final time is exactly t_end.

    Args:
        params: Action parameters
        s0: Initial state
        t_end: Final time (t_end = 0 returns s0)
        cfg: Integrator configuration
        consumer: Optional callback receiving (t, state) after every step

    Returns:
        The state at t_end

    Raises:
        NumericalBlowUpError: If the trajectory leaves the finite numbers
    """
    if t_end < 0 or not math.isfinite(t_end):
        raise ValueError(f"t_end must be a non-negative finite time, got {t_end}")
    if t_end == 0:
        return s0

    n_steps, h = resolve_steps(t_end, cfg.step)
    p = params.as_array()
    w = s0.as_array()

    if consumer is None:
        taken = _advance(p, w, h, cfg.order, n_steps)
        if not np.all(np.isfinite(w)):
            raise NumericalBlowUpError(w, taken * h)
        return PhaseState.from_array(w)

    for k in range(1, n_steps + 1):
        _advance(p, w, h, cfg.order, 1)
        if not np.all(np.isfinite(w)):
            raise NumericalBlowUpError(w, k * h)
        consumer(k * h, PhaseState.from_array(w))
    return PhaseState.from_array(w)
