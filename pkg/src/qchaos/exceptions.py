"""
Exception types raised by qchaos.
"""

from typing import Optional, Sequence

import numpy as np


class QChaosError(Exception):
    """Base class for all qchaos failures."""


class NumericalBlowUpError(QChaosError):
    """An integrator produced a non-finite state."""

    def __init__(self, state: Sequence[float], time: float):
        self.state = np.array(state, dtype=np.float64)
        self.time = float(time)
        super().__init__(f"Non-finite state {self.state.tolist()} at t={self.time:g}")


class DegenerateTangentError(QChaosError):
    """The tangent vector has zero or non-finite norm."""


class SamplingError(QChaosError):
    """Rejection sampling accepted too few proposals."""


class GridTooSmallError(QChaosError):
    """The evolved kernel leaks onto the boundary of the grid."""

    def __init__(self, ratio: float, tolerance: float):
        self.ratio = float(ratio)
        self.tolerance = float(tolerance)
        super().__init__(
            f"Boundary/peak ratio {self.ratio:.3e} exceeds {self.tolerance:.1e}; enlarge the grid"
        )


class ConvergenceError(QChaosError):
    """An iterative solver did not converge."""

    def __init__(self, message: str, best_residual: float):
        self.best_residual = float(best_residual)
        super().__init__(f"{message} (best residual {self.best_residual:.3e})")


class BvpConvergenceError(ConvergenceError):
    """Neither shooting nor collocation solved the boundary-value problem."""


class FitConvergenceError(ConvergenceError):
    """The quantum-action fit ran out of iterations."""

    def __init__(self, message: str, best_residual: float, best_params=None):
        self.best_params = best_params
        super().__init__(message, best_residual)


class CausticError(QChaosError):
    """The fluctuation determinant is not positive (focal configuration)."""


class UnderdeterminedFitError(QChaosError, ValueError):
    """Fewer usable amplitudes than fitted parameters."""


class ConfigError(QChaosError, ValueError):
    """An experiment configuration line is invalid."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ''
        super().__init__(f"{prefix}{message}")
