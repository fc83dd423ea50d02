"""
Quantum-action fitting.

A trial action with parameters (m, v0, v2, v22, v4) predicts imaginary-time
amplitudes G = Z * exp(-Sigma), where Sigma is the Euclidean action along the
classical path of the trial action (m x'' = +grad V) between the boundary
points, and Z is the Van Vleck-Pauli-Morette prefactor with the zero-point
decay of the trial's quadratic part taken out,

    Z = (2 pi)^-1 sqrt(det[-d2 Sigma / dx_in dx_fi]) exp(omega T),
    omega = sqrt(2 v2 / m).

The constant v0 then carries the whole ground-state decay: a trial fitted to
a propagator table has v0 close to E_gr, and a harmonic trial with v0 = omega
reproduces the kernel of the oscillator with no offset.

`fit` adjusts the trial parameters until these predictions match a table of
propagator amplitudes in log space.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy import integrate
from typing_extensions import Literal

from .dynamics import JIT_OPTIONS, PARAM_NAMES, ActionParams, _gradient, _hessian, grad_potential, potential
from .exceptions import (
    BvpConvergenceError,
    CausticError,
    FitConvergenceError,
    QChaosError,
    UnderdeterminedFitError,
)
from .propagator import AmplitudeEntry, AmplitudeTable, Point

logger = logging.getLogger(__name__)

DEFAULT_BVP_STEPS = 2000
SHOOTING_MAX_ITER = 200
SHOOTING_TOLERANCE = 1e-13
SHOOTING_ACCEPT = 1e-9
FD_DISPLACEMENT = 1e-4
FIT_MAX_ITER = 500

FitMode = Literal['vvpm', 'nuisance']
MixedMethod = Literal['variational', 'finite-difference']

DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    'mass': (0.5, 2.0),
    'v0': (0.0, 5.0),
    'v2': (0.1, 2.0),
    'v22': (-0.5, 1.0),
    'v4': (-0.1, 0.1),
}

# Euclidean flow with its full variational matrix.
# y[0:4] = (x, y, vx, vy); y[4 + 4 r + c] = d y[r] / d y0[c].

@njit(**JIT_OPTIONS)
def _euclidean_rhs(p, y, dy):
    m = p[0]
    gx, gy = _gradient(p, y[0], y[1])
    hxx, hyy, hxy = _hessian(p, y[0], y[1])
    dy[0] = y[2]
    dy[1] = y[3]
    dy[2] = gx / m
    dy[3] = gy / m
    for c in range(4):
        dy[4 + c] = y[12 + c]
        dy[8 + c] = y[16 + c]
        dy[12 + c] = (hxx * y[4 + c] + hxy * y[8 + c]) / m
        dy[16 + c] = (hxy * y[4 + c] + hyy * y[8 + c]) / m


@njit(**JIT_OPTIONS)
def _flow(p, x0, y0, vx0, vy0, T, n_steps, samples, record):
    """RK4 over [0, T] in n_steps; fills samples rows (t, x, y, vx, vy) when record is set."""
    y = np.zeros(20)
    y[0] = x0
    y[1] = y0
    y[2] = vx0
    y[3] = vy0
    for r in range(4):
        y[4 + 5 * r] = 1.0
    k1 = np.empty(20)
    k2 = np.empty(20)
    k3 = np.empty(20)
    k4 = np.empty(20)
    tmp = np.empty(20)
    h = T / n_steps
    if record:
        samples[0, 0] = 0.0
        for i in range(4):
            samples[0, 1 + i] = y[i]
    for k in range(n_steps):
        _euclidean_rhs(p, y, k1)
        for i in range(20):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _euclidean_rhs(p, tmp, k2)
        for i in range(20):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _euclidean_rhs(p, tmp, k3)
        for i in range(20):
            tmp[i] = y[i] + h * k3[i]
        _euclidean_rhs(p, tmp, k4)
        for i in range(20):
            y[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
        if record:
            samples[k + 1, 0] = (k + 1) * h
            for i in range(4):
                samples[k + 1, 1 + i] = y[i]
    return y


@njit(**JIT_OPTIONS)
def _miss(y, xf0, xf1):
    r0 = y[0] - xf0
    r1 = y[1] - xf1
    return r0, r1, math.sqrt(r0 * r0 + r1 * r1)


@njit(**JIT_OPTIONS)
def _shoot(p, xi0, xi1, xf0, xf1, T, n_steps, vx, vy, max_iter, tol, accept):
    """
    Damped Newton iteration on the initial velocity.

    Returns (vx, vy, miss distance, iterations, converged).
    """
    dummy = np.zeros((1, 5))
    y = _flow(p, xi0, xi1, vx, vy, T, n_steps, dummy, False)
    r0, r1, res = _miss(y, xf0, xf1)
    for it in range(max_iter):
        if not np.isfinite(res):
            return vx, vy, res, it, False
        if res <= tol:
            return vx, vy, res, it, True
        # d x(T) / d v0 block of the variational matrix
        a = y[4 + 2]
        b = y[4 + 3]
        c = y[8 + 2]
        d = y[8 + 3]
        det = a * d - b * c
        if det == 0.0 or not np.isfinite(det):
            return vx, vy, res, it, False
        dvx = -(d * r0 - b * r1) / det
        dvy = -(-c * r0 + a * r1) / det
        lam = 1.0
        improved = False
        y_try = y
        t0, t1, res_try = r0, r1, res
        for _ in range(40):
            y_try = _flow(p, xi0, xi1, vx + lam * dvx, vy + lam * dvy, T, n_steps, dummy, False)
            t0, t1, res_try = _miss(y_try, xf0, xf1)
            if np.isfinite(res_try) and res_try < res:
                improved = True
                break
            lam *= 0.5
        if not improved:
            # stalled at round-off
            return vx, vy, res, it, res <= accept
        vx += lam * dvx
        vy += lam * dvy
        y = y_try
        r0 = t0
        r1 = t1
        res = res_try
    return vx, vy, res, max_iter, res <= tol


@dataclass
class EuclideanTrajectory:
    """Classical path of a trial action between two boundary points in imaginary time."""

    samples: np.ndarray
    boundary: Tuple[Point, Point]
    T: float
    action_value: float = float('nan')
    method: str = 'shooting'
    monodromy: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def initial_velocity(self) -> np.ndarray:
        return self.samples[0, 3:5].copy()

    @property
    def final_velocity(self) -> np.ndarray:
        return self.samples[-1, 3:5].copy()

    @property
    def boundary_error(self) -> float:
        (x_in, x_fi) = self.boundary
        start = np.abs(self.samples[0, 1:3] - np.asarray(x_in)).max()
        end = np.abs(self.samples[-1, 1:3] - np.asarray(x_fi)).max()
        return float(max(start, end))

    def euclidean_energy(self, trial: ActionParams) -> np.ndarray:
        """1/2 m v^2 - V along the samples; conserved by the exact path."""
        s = self.samples
        return 0.5 * trial.mass * (s[:, 3] ** 2 + s[:, 4] ** 2) - potential(trial, s[:, 1], s[:, 2])

    def reversed(self) -> 'EuclideanTrajectory':
        """The same path traversed from x_fi to x_in."""
        s = self.samples[::-1].copy()
        s[:, 0] = self.T - s[:, 0]
        s[:, 3:5] *= -1.0
        return EuclideanTrajectory(samples=s, boundary=(self.boundary[1], self.boundary[0]),
                                   T=self.T, action_value=self.action_value, method=self.method)


def harmonic_guess(trial: ActionParams, x_in: Point, x_fi: Point, T: float) -> np.ndarray:
    """Initial velocity of the sinh interpolant of the harmonic part of the trial."""
    w = trial.omega
    s = math.sinh(w * T)
    c = math.cosh(w * T)
    return w * (np.asarray(x_fi, dtype=float) - c * np.asarray(x_in, dtype=float)) / s


def _collocation(
    trial: ActionParams,
    x_in: Point,
    x_fi: Point,
    T: float,
    n_steps: int
) -> Tuple[Optional[np.ndarray], float]:
    """scipy collocation on an (n_steps + 1)-node mesh; returns (samples or None, residual)."""
    t = np.linspace(0.0, T, n_steps + 1)
    w = trial.omega
    s = math.sinh(w * T)
    guess = np.zeros((4, t.size))
    for i in range(2):
        guess[i] = (x_in[i] * np.sinh(w * (T - t)) + x_fi[i] * np.sinh(w * t)) / s
        guess[2 + i] = w * (-x_in[i] * np.cosh(w * (T - t)) + x_fi[i] * np.cosh(w * t)) / s

    def rhs(_, y):
        gx, gy = grad_potential(trial, y[0], y[1])
        return np.vstack((y[2], y[3], gx / trial.mass, gy / trial.mass))

    def bc(ya, yb):
        return np.array([ya[0] - x_in[0], ya[1] - x_in[1], yb[0] - x_fi[0], yb[1] - x_fi[1]])

    sol = integrate.solve_bvp(rhs, bc, t, guess, tol=1e-10, max_nodes=50 * (n_steps + 1))
    residual = float(np.max(sol.rms_residuals)) if sol.rms_residuals.size else math.inf
    if not sol.success:
        return None, residual
    y = sol.sol(t)
    samples = np.column_stack((t, y[0], y[1], y[2], y[3]))
    return samples, residual


def solve_bvp(
    trial: ActionParams,
    x_in: Point,
    x_fi: Point,
    T: float,
    n_steps: int = DEFAULT_BVP_STEPS
) -> EuclideanTrajectory:
    """
    Euclidean classical path from (x_in, 0) to (x_fi, T).

    Shooting on the initial velocity with a damped Newton update comes
    first; if it fails within 200 iterations the problem is handed to
    collocation on an (n_steps + 1)-node mesh.

    Args:
        trial: Trial action parameters
        x_in: Initial boundary point
        x_fi: Final boundary point
        T: Imaginary time (> 0)
        n_steps: RK4 steps of the shooting integrator (h = T / n_steps)

    Returns:
        EuclideanTrajectory with its action value

    Raises:
        BvpConvergenceError: If both methods fail
    """
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"T must be positive, got {T}")
    if n_steps < 2 or n_steps % 2:
        raise ValueError(f"n_steps must be even and >= 2, got {n_steps}")
    x_in = (float(x_in[0]), float(x_in[1]))
    x_fi = (float(x_fi[0]), float(x_fi[1]))
    p = trial.as_array()

    v = harmonic_guess(trial, x_in, x_fi, T)
    vx, vy, res, iterations, converged = _shoot(
        p, x_in[0], x_in[1], x_fi[0], x_fi[1], T, n_steps, v[0], v[1],
        SHOOTING_MAX_ITER, SHOOTING_TOLERANCE, SHOOTING_ACCEPT
    )
    method = 'shooting'
    best = res

    if not converged:
        logger.debug(f"Shooting failed for {x_in} -> {x_fi} (miss {res:.3e}); trying collocation")
        samples, residual = _collocation(trial, x_in, x_fi, T, n_steps)
        if samples is None:
            raise BvpConvergenceError(f"No Euclidean path from {x_in} to {x_fi} at T={T:g}",
                                      min(best, residual))
        # polish the collocation velocity with shooting
        vx, vy, res, iterations, converged = _shoot(
            p, x_in[0], x_in[1], x_fi[0], x_fi[1], T, n_steps, samples[0, 3], samples[0, 4],
            SHOOTING_MAX_ITER, SHOOTING_TOLERANCE, SHOOTING_ACCEPT
        )
        method = 'collocation'
        if not converged:
            y = _flow(p, x_in[0], x_in[1], samples[0, 3], samples[0, 4], T, n_steps, np.zeros((1, 5)), False)
            traj = EuclideanTrajectory(samples=samples, boundary=(x_in, x_fi), T=T, method=method,
                                       monodromy=y[4:].reshape(4, 4).copy())
            traj.action_value = action_along(trial, traj)
            return traj

    samples = np.empty((n_steps + 1, 5))
    y = _flow(p, x_in[0], x_in[1], vx, vy, T, n_steps, samples, True)
    traj = EuclideanTrajectory(samples=samples, boundary=(x_in, x_fi), T=T, method=method,
                               monodromy=y[4:].reshape(4, 4).copy())
    traj.action_value = action_along(trial, traj)
    return traj


def action_along(trial: ActionParams, traj: EuclideanTrajectory) -> float:
    """Simpson quadrature of 1/2 m v^2 + V (v0 included) over the samples."""
    s = traj.samples
    lagrangian = 0.5 * trial.mass * (s[:, 3] ** 2 + s[:, 4] ** 2) + potential(trial, s[:, 1], s[:, 2])
    return float(integrate.simpson(lagrangian, x=s[:, 0]))


def mixed_hessian(trial: ActionParams, traj: EuclideanTrajectory) -> np.ndarray:
    """
    d2 Sigma / dx_in dx_fi from the variational matrix of the path.

    With dSigma/dx_fi = m v(T) and the final point held fixed,
    m (P_vx - P_vv P_xv^-1 P_xx) = d(m v(T)) / dx_in in terms of the blocks of
    d(x, v)(T) / d(x, v)(0). Its rows index x_fi, so the result is its
    transpose: M[i, j] = d2 Sigma / dx_in[i] dx_fi[j], as in mixed_hessian_fd.
    """
    phi = traj.monodromy
    p_xx = phi[0:2, 0:2]
    p_xv = phi[0:2, 2:4]
    p_vx = phi[2:4, 0:2]
    p_vv = phi[2:4, 2:4]
    return (trial.mass * (p_vx - p_vv @ np.linalg.solve(p_xv, p_xx))).T


def mixed_hessian_fd(
    trial: ActionParams,
    x_in: Point,
    x_fi: Point,
    T: float,
    n_steps: int = DEFAULT_BVP_STEPS,
    displacement: float = FD_DISPLACEMENT
) -> np.ndarray:
    """Central finite differences of Sigma over boundary displacements (16 solves)."""
    h = displacement
    x_in = np.asarray(x_in, dtype=float)
    x_fi = np.asarray(x_fi, dtype=float)
    unit = np.eye(2)
    m = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            total = 0.0
            for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                traj = solve_bvp(trial, tuple(x_in + si * h * unit[i]), tuple(x_fi + sj * h * unit[j]),
                                 T, n_steps)
                total += sign * traj.action_value
            m[i, j] = total / (4.0 * h * h)
    return m


class AmplitudeModel:
    """Trial-action amplitude terms for one parameter set and imaginary time."""

    def __init__(
        self,
        trial: ActionParams,
        T: float,
        n_steps: int = DEFAULT_BVP_STEPS,
        mixed: MixedMethod = 'variational'
    ):
        if mixed not in ('variational', 'finite-difference'):
            raise ValueError(f"Unknown mixed-derivative method '{mixed}'")
        self.trial = trial
        self.T = T
        self.n_steps = n_steps
        self.mixed = mixed

    def action(self, x_in: Point, x_fi: Point) -> float:
        return solve_bvp(self.trial, x_in, x_fi, self.T, self.n_steps).action_value

    def terms(self, x_in: Point, x_fi: Point) -> Tuple[float, float]:
        """
        Returns:
            Tuple of (Sigma, ln Z)

        Raises:
            CausticError: If det[-M] is not positive
            BvpConvergenceError: If the path cannot be found
        """
        traj = solve_bvp(self.trial, x_in, x_fi, self.T, self.n_steps)
        if self.mixed == 'variational':
            try:
                m = mixed_hessian(self.trial, traj)
            except np.linalg.LinAlgError:
                raise CausticError(f"Singular focusing block for {tuple(x_in)} -> {tuple(x_fi)}")
        else:
            m = mixed_hessian_fd(self.trial, x_in, x_fi, self.T, self.n_steps)
        det = float(np.linalg.det(-m))
        if not (det > 0 and math.isfinite(det)):
            raise CausticError(f"Fluctuation determinant {det:.3e} for {tuple(x_in)} -> {tuple(x_fi)}")
        # the determinant decays like exp(-omega T) at large T; taking that zero-point
        # factor out leaves v0 as the only constant decay rate of the model
        log_z = 0.5 * math.log(det) - math.log(2.0 * math.pi) + self.trial.omega * self.T
        return traj.action_value, log_z

    def log_amplitude(self, x_in: Point, x_fi: Point) -> float:
        sigma, log_z = self.terms(x_in, x_fi)
        return log_z - sigma


def log_model_amplitude(
    trial: ActionParams,
    x_in: Point,
    x_fi: Point,
    T: float,
    n_steps: int = DEFAULT_BVP_STEPS
) -> float:
    """ln(Z exp(-Sigma)) for the trial action."""
    return AmplitudeModel(trial, T, n_steps).log_amplitude(x_in, x_fi)


def model_amplitude(
    trial: ActionParams,
    x_in: Point,
    x_fi: Point,
    T: float,
    n_steps: int = DEFAULT_BVP_STEPS
) -> float:
    """
    Trial-action prediction Z exp(-Sigma) of G(x_fi, T; x_in, 0).

    Raises:
        CausticError: At focal configurations
        BvpConvergenceError: If the path cannot be found
    """
    return math.exp(log_model_amplitude(trial, x_in, x_fi, T, n_steps))


@dataclass
class FitResult:
    """Fitted quantum-action parameters with error estimates."""

    params: ActionParams
    errors: Dict[str, float]
    residual: float
    metadata: Dict[str, Any] = field(default_factory=dict)


class _Objective:
    """Log-amplitude residuals of a table as a function of the free parameter vector."""

    def __init__(
        self,
        entries: List[AmplitudeEntry],
        base: ActionParams,
        mode: FitMode,
        free: List[str],
        n_steps: int,
        pool
    ):
        self.entries = entries
        self.base = base
        self.mode = mode
        self.free = free
        self.n_steps = n_steps
        self.pool = pool
        self.log_g = np.array([math.log(e.G) for e in entries])
        self.log_prefactor = 0.0

    def unpack(self, theta: np.ndarray) -> Tuple[ActionParams, float]:
        values = dict(zip(PARAM_NAMES, self.base.as_array()))
        log_z = self.log_prefactor
        for name, value in zip(self.free, theta):
            if name == 'log_prefactor':
                log_z = float(value)
            else:
                values[name] = float(value)
        return ActionParams(**values), log_z

    def _predict_one(self, trial: ActionParams, log_z: float, entry: AmplitudeEntry) -> float:
        model = AmplitudeModel(trial, entry.T, self.n_steps)
        if self.mode == 'nuisance':
            return log_z - model.action(entry.x_in, entry.x_fi)
        return model.log_amplitude(entry.x_in, entry.x_fi)

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        trial, log_z = self.unpack(theta)
        predicted = self.pool.map(lambda e: self._predict_one(trial, log_z, e), self.entries)
        return self.log_g - np.array(predicted)

    def jacobian(self, theta: np.ndarray, r: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """Forward differences of the residuals, stepping backwards at an upper bound."""
        steps = 1e-7 * np.maximum(np.abs(theta), 1.0)
        steps = np.where(theta + steps > upper, -steps, steps)

        def column(j: int) -> np.ndarray:
            shifted = theta.copy()
            shifted[j] += steps[j]
            return (self.residuals(shifted) - r) / steps[j]

        return np.column_stack([column(j) for j in range(theta.size)])


def _screen_entries(
    entries: List[AmplitudeEntry],
    trial: ActionParams,
    n_steps: int,
    pool
) -> Tuple[List[AmplitudeEntry], int, bool]:
    """Drop entries whose path cannot be found; report whether any were caustic."""

    def check(entry: AmplitudeEntry) -> Optional[str]:
        try:
            AmplitudeModel(trial, entry.T, n_steps).terms(entry.x_in, entry.x_fi)
        except CausticError:
            return 'caustic'
        except QChaosError as e:
            return str(e)
        return None

    outcomes = pool.map(check, entries)
    kept = []
    dropped = 0
    caustic = False
    for entry, outcome in zip(entries, outcomes):
        if outcome == 'caustic':
            caustic = True
            kept.append(entry)
        elif outcome is not None:
            logger.warning(f"Dropping entry {entry.x_in} -> {entry.x_fi}: {outcome}")
            dropped += 1
        else:
            kept.append(entry)
    return kept, dropped, caustic


def fit(
    table: AmplitudeTable,
    initial: Optional[ActionParams] = None,
    mode: FitMode = 'vvpm',
    bounds: Optional[Dict[str, Tuple[float, float]]] = None,
    max_iter: int = FIT_MAX_ITER,
    pool=None,
    n_steps: int = DEFAULT_BVP_STEPS
) -> FitResult:
    """
    Fit quantum-action parameters to an amplitude table.

    Minimizes the sum of squared log-amplitude residuals with a
    Levenberg-Marquardt iteration, keeping the parameters inside `bounds`.
    In 'vvpm' mode the prefactor comes from the fluctuation determinant;
    a caustic at the starting point switches the fit to 'nuisance' mode,
    where ln Z is one shared fit constant. With a single imaginary time in
    the table, ln Z and v0 are degenerate in nuisance mode and v0 stays at
    its initial value.

    Args:
        table: Amplitude table
        initial: Starting parameters; default is the table's action with v0 = E_gr
        mode: Prefactor treatment
        bounds: Per-parameter (low, high); DEFAULT_BOUNDS if None
        max_iter: Maximum outer iterations
        pool: WorkerPool; the global pool by default
        n_steps: Shooting steps per boundary-value solve

    Returns:
        FitResult

    Raises:
        UnderdeterminedFitError: If fewer usable entries than free parameters
        FitConvergenceError: If max_iter is reached first
    """
    if mode not in ('vvpm', 'nuisance'):
        raise ValueError(f"Unknown fit mode '{mode}'")
    bounds = dict(DEFAULT_BOUNDS, **(bounds or {}))
    if pool is None:
        from .workers import get_worker_pool
        pool = get_worker_pool()

    entries = table.valid_entries
    if len(entries) < len(PARAM_NAMES):
        raise UnderdeterminedFitError(
            f"{len(entries)} usable amplitudes for {len(PARAM_NAMES)} parameters"
        )

    if initial is None:
        e_gr = table.ground_state_energy
        if e_gr is None:
            from .propagator import ground_state_energy
            e_gr = ground_state_energy(table.params, table.grid, table.tau)
        initial = table.params.replace(v0=min(max(e_gr, bounds['v0'][0]), bounds['v0'][1]))

    entries, dropped, caustic = _screen_entries(entries, initial, n_steps, pool)
    fallback = False
    if caustic and mode == 'vvpm':
        logger.warning("Caustic at the starting point; switching to a shared prefactor constant")
        mode = 'nuisance'
        fallback = True

    single_time = len({e.T for e in entries}) == 1
    free = list(PARAM_NAMES)
    if mode == 'nuisance':
        if single_time:
            free.remove('v0')
        free.append('log_prefactor')
    if len(entries) < len(free):
        raise UnderdeterminedFitError(f"{len(entries)} usable amplitudes for {len(free)} parameters")

    objective = _Objective(entries, initial, mode, free, n_steps, pool)
    lower = np.array([bounds.get(name, (-np.inf, np.inf))[0] for name in free])
    upper = np.array([bounds.get(name, (-np.inf, np.inf))[1] for name in free])

    start = dict(zip(PARAM_NAMES, initial.as_array()))
    if mode == 'nuisance':
        # seed ln Z so the initial residuals have zero mean
        actions = pool.map(lambda e: AmplitudeModel(initial, e.T, n_steps).action(e.x_in, e.x_fi), entries)
        start['log_prefactor'] = float(np.mean(objective.log_g + np.array(actions)))
    theta = np.clip(np.array([start[name] for name in free]), lower, upper)

    r = objective.residuals(theta)
    cost = float(r @ r)
    history = [cost]
    mu = 1e-3
    converged = False
    iterations = 0
    logger.info(f"Fitting {len(free)} parameters to {len(entries)} amplitudes ({mode}); initial cost {cost:.6e}")

    for iterations in range(1, max_iter + 1):
        jac = objective.jacobian(theta, r, lower, upper)
        jtj = jac.T @ jac
        grad = jac.T @ r
        scale = np.diag(jtj).copy()
        scale[scale == 0] = 1.0

        accepted = False
        while mu < 1e16:
            try:
                delta = np.linalg.solve(jtj + mu * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            candidate = np.clip(theta + delta, lower, upper)
            try:
                r_try = objective.residuals(candidate)
                cost_try = float(r_try @ r_try)
            except QChaosError as e:
                logger.debug(f"Trial step rejected: {e}")
                cost_try = math.inf
            if cost_try <= cost:
                accepted = True
                break
            mu *= 4.0

        if not accepted:
            # no descent direction left at this damping: numerical minimum
            converged = True
            break

        step = np.abs(candidate - theta)
        decrease = cost - cost_try
        theta, r, cost = candidate, r_try, cost_try
        history.append(cost)
        mu = max(mu / 3.0, 1e-12)
        logger.debug(f"Fit iteration {iterations}: cost {cost:.6e}")
        if np.all(step <= 1e-12 * np.maximum(np.abs(theta), 1e-3)) or decrease <= 1e-15 * cost or cost < 1e-28:
            converged = True
            break

    best, log_z = objective.unpack(theta)
    n = len(entries)
    residual = math.sqrt(cost / n)
    if not converged:
        raise FitConvergenceError(f"Fit did not converge in {max_iter} iterations", residual, best)

    jac = objective.jacobian(theta, r, lower, upper)
    dof = n - len(free)
    errors = {name: 0.0 for name in PARAM_NAMES}
    if dof > 0:
        covariance = cost / dof * np.linalg.pinv(jac.T @ jac)
        for name, var in zip(free, np.diag(covariance)):
            if name in errors:
                errors[name] = float(math.sqrt(max(var, 0.0)))
    else:
        errors = {name: float('nan') for name in PARAM_NAMES}

    metadata = {
        'mode': mode,
        'prefactor_fallback': fallback,
        'dropped': dropped,
        'entries': n,
        'iterations': iterations,
        'history': history,
        'free': free,
    }
    if mode == 'nuisance':
        metadata['log_prefactor'] = log_z
    logger.info(f"✓ Fit converged after {iterations} iterations, residual {residual:.3e}")
    return FitResult(params=best, errors=errors, residual=residual, metadata=metadata)


def format_fit_report(result: FitResult, reference: Optional[ActionParams] = None) -> str:
    """
    Render a fit as CSV rows (parameter, classical, fitted, error) plus key = value lines.

    Args:
        result: Fit result
        reference: Classical action to compare against

    Returns:
        Report text
    """
    from .utils import format_float

    lines = ['parameter,classical,fitted,error']
    for name in PARAM_NAMES:
        classical = format_float(getattr(reference, name)) if reference is not None else ''
        lines.append(f"{name},{classical},{format_float(getattr(result.params, name))},"
                     f"{format_float(result.errors[name])}")
    meta = result.metadata
    lines.append(f"# residual = {format_float(result.residual)}")
    for key in ('mode', 'prefactor_fallback', 'entries', 'dropped', 'iterations'):
        if key in meta:
            lines.append(f"# {key} = {meta[key]}")
    if 'log_prefactor' in meta:
        lines.append(f"# log_prefactor = {format_float(meta['log_prefactor'])}")
    return '\n'.join(lines) + '\n'
