"""
Imaginary-time transition amplitudes on a periodic 2-D grid.

G(x, T; s, 0) = <x| exp(-T H) |s> is obtained by symmetric split-operator
evolution of a delta source: half potential, full kinetic step in the
momentum representation, half potential. The first half potential factor
acting on a delta is the scalar exp(-tau V(s) / 2), applied exactly.
"""

import math
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from .dynamics import ActionParams, potential
from .exceptions import ConvergenceError, GridTooSmallError, QChaosError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

DEFAULT_LEAK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Grid2D:
    """Periodic square grid x_j = -L + j * spacing, j = 0..n-1, on both axes."""

    half_width: float = 8.0
    n: int = 128

    def __post_init__(self):
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n < 32 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 32, got {self.n}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n)

    def contains(self, point: Point) -> bool:
        return all(-self.half_width <= c <= self.half_width - self.spacing for c in point)


@dataclass(frozen=True)
class PropagatorConfig:
    """Grid, time slice tau and transition time T."""

    grid: Grid2D = Grid2D()
    tau: float = 0.01
    transition_time: float = 4.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.transition_time > 0:
            raise ValueError(f"transition_time must be positive, got {self.transition_time}")


@dataclass
class KernelField:
    """G(., T; source, 0) sampled on the grid; values[i, j] sits at (axis[i], axis[j])."""

    grid: Grid2D
    T: float
    source: Point
    values: np.ndarray

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def boundary_ratio(self) -> float:
        v = np.abs(self.values)
        edge = max(v[0, :].max(), v[-1, :].max(), v[:, 0].max(), v[:, -1].max())
        return float(edge / self.peak)

    def at(self, point: Point) -> float:
        """Bilinear read-off; exact on grid nodes."""
        g = self.grid
        u = (point[0] + g.half_width) / g.spacing
        w = (point[1] + g.half_width) / g.spacing
        i0 = min(max(int(math.floor(u)), 0), g.n - 2)
        j0 = min(max(int(math.floor(w)), 0), g.n - 2)
        fu = u - i0
        fw = w - j0
        v = self.values
        return float(
            (1 - fu) * (1 - fw) * v[i0, j0] + fu * (1 - fw) * v[i0 + 1, j0]
            + (1 - fu) * fw * v[i0, j0 + 1] + fu * fw * v[i0 + 1, j0 + 1]
        )


def harmonic_kernel(mass: float, omega: float, x, y, T: float):
    """
    Closed-form 1-D imaginary-time harmonic kernel (Mehler form).

    Args:
        mass: Particle mass
        omega: Oscillator frequency
        x: Final position(s)
        y: Initial position(s)
        T: Imaginary time

    Returns:
        <x| exp(-T H) |y> for H = p^2/2m + m omega^2 x^2 / 2
    """
    s = math.sinh(omega * T)
    c = math.cosh(omega * T)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return math.sqrt(mass * omega / (2.0 * math.pi * s)) * np.exp(
        -mass * omega * ((x * x + y * y) * c - 2.0 * x * y) / (2.0 * s)
    )


def _delta_1d(grid: Grid2D, position: float) -> np.ndarray:
    """Band-limited delta at an arbitrary position; 1/spacing at a node, zero elsewhere."""
    u = (position + grid.half_width) / grid.spacing
    k = np.arange(grid.n // 2 + 1)
    spectrum = np.exp(-2j * math.pi * u * k / grid.n) / grid.spacing
    return fft.irfft(spectrum, n=grid.n)


class _SplitOperator:
    """Precomputed factors for one (params, grid, tau) combination."""

    def __init__(self, params: ActionParams, grid: Grid2D, tau: float):
        self.params = params
        self.grid = grid
        self.tau = tau
        x = grid.axis
        X, Y = np.meshgrid(x, x, indexing='ij')
        self.V = potential(params, X, Y)
        self.half_potential = np.exp(-0.5 * tau * self.V)
        self.full_potential = self.half_potential * self.half_potential
        kx = 2.0 * math.pi * fft.fftfreq(grid.n, d=grid.spacing)
        ky = 2.0 * math.pi * fft.rfftfreq(grid.n, d=grid.spacing)
        KX, KY = np.meshgrid(kx, ky, indexing='ij')
        self.kinetic = np.exp(-tau * (KX * KX + KY * KY) / (2.0 * params.mass))

    def kinetic_step(self, values: np.ndarray) -> np.ndarray:
        return fft.irfft2(fft.rfft2(values) * self.kinetic, s=values.shape)

    def evolve(self, values: np.ndarray, n_slices: int, closed: bool = True) -> np.ndarray:
        """
        Apply n_slices kinetic steps separated by full potential factors.

        The incoming field is assumed to carry its leading half potential;
        with closed=True the trailing half potential is applied as well.
        """
        for k in range(n_slices):
            values = self.kinetic_step(values)
            last = k == n_slices - 1
            values = values * (self.half_potential if (last and closed) else self.full_potential)
        return values


def _slices(T: float, tau: float) -> Tuple[int, float]:
    n = max(1, int(math.ceil(T / tau - 1e-9)))
    return n, T / n


def propagate(
    params: ActionParams,
    grid: Grid2D,
    T: float,
    source: Point,
    tau: float = 0.01,
    leak_tolerance: float = DEFAULT_LEAK_TOLERANCE
) -> KernelField:
    """
    Euclidean kernel G(., T; source, 0) on the grid.

    Args:
        params: Action parameters of the Hamiltonian
        grid: Spatial grid
        T: Imaginary time (> 0)
        source: Initial point, inside the grid
        tau: Maximum time slice; ceil(T / tau) equal slices are used
        leak_tolerance: Largest allowed boundary/peak ratio

    Returns:
        KernelField

    Raises:
        GridTooSmallError: If the kernel reaches the grid boundary
    """
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"T must be positive, got {T}")
    if not grid.contains(source):
        raise ValueError(f"Source {source} lies outside the grid")

    n_slices, tau = _slices(T, tau)
    op = _SplitOperator(params, grid, tau)
    delta = np.outer(_delta_1d(grid, source[0]), _delta_1d(grid, source[1]))
    values = delta * math.exp(-0.5 * tau * potential(params, source[0], source[1]))
    values = op.evolve(values, n_slices)

    kernel = KernelField(grid=grid, T=T, source=(float(source[0]), float(source[1])), values=values)
    ratio = kernel.boundary_ratio
    if ratio > leak_tolerance:
        raise GridTooSmallError(ratio, leak_tolerance)
    return kernel


def ground_state_energy(
    params: ActionParams,
    grid: Grid2D,
    tau: float = 0.01,
    block: float = 0.5,
    tolerance: float = 1e-6,
    max_slices: int = 100_000
) -> float:
    """
    Ground-state energy from the decay rate of an evolved positive field.

    The field is propagated in blocks of imaginary time `block`; after each
    block the rate -ln(N(t + block) / N(t)) / block is recorded and the field
    renormalized. Iteration stops when successive rates agree to `tolerance`.

    Raises:
        ConvergenceError: If max_slices are used up first
    """
    n_block, tau = _slices(block, tau)
    op = _SplitOperator(params, grid, tau)
    x = grid.axis
    X, Y = np.meshgrid(x, x, indexing='ij')
    values = np.exp(-0.5 * (X * X + Y * Y))
    values /= np.linalg.norm(values)

    previous = math.inf
    change = math.inf
    used = 0
    while used + n_block <= max_slices:
        values = op.evolve(values * op.half_potential, n_block)
        used += n_block
        norm = np.linalg.norm(values)
        energy = -math.log(norm) / (n_block * tau)
        values /= norm
        change = abs(energy - previous)
        if change < tolerance:
            logger.debug(f"Ground state converged after {used} slices: E_gr={energy:.10f}")
            return energy
        previous = energy
    raise ConvergenceError(f"Ground-state energy not converged within {max_slices} slices", change)


@dataclass(frozen=True)
class AmplitudeEntry:
    """G(x_fi, T; x_in, 0), or the error that prevented computing it."""

    x_in: Point
    x_fi: Point
    T: float
    G: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.G > 0 and math.isfinite(self.G)


@dataclass
class AmplitudeTable:
    """Imaginary-time amplitudes with the parameters and grid they came from."""

    params: ActionParams
    grid: Grid2D
    tau: float
    entries: List[AmplitudeEntry] = field(default_factory=list)
    ground_state_energy: Optional[float] = None

    @property
    def valid_entries(self) -> List[AmplitudeEntry]:
        return [e for e in self.entries if e.ok]

    def to_text(self) -> str:
        """Header lines with provenance, then rows `x_in_x x_in_y x_fi_x x_fi_y T G`."""
        from .utils import format_float

        p = self.params
        lines = [
            f"# mass = {format_float(p.mass)}",
            f"# v0 = {format_float(p.v0)}",
            f"# v2 = {format_float(p.v2)}",
            f"# v22 = {format_float(p.v22)}",
            f"# v4 = {format_float(p.v4)}",
            f"# grid_half_width = {format_float(self.grid.half_width)}",
            f"# grid_n = {self.grid.n}",
            f"# tau = {format_float(self.tau)}",
        ]
        if self.ground_state_energy is not None:
            lines.append(f"# ground_state_energy = {format_float(self.ground_state_energy)}")
            lines.append(f"# dynamical_time_scale = {format_float(1.0 / self.ground_state_energy)}")
        lines.append("# x_in_x x_in_y x_fi_x x_fi_y T G")
        for e in self.entries:
            if e.error is not None:
                lines.append(f"# failed {format_float(e.x_in[0])} {format_float(e.x_in[1])} "
                             f"{format_float(e.x_fi[0])} {format_float(e.x_fi[1])} "
                             f"{format_float(e.T)}: {e.error}")
                continue
            lines.append(' '.join(format_float(v) for v in (*e.x_in, *e.x_fi, e.T, e.G)))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'AmplitudeTable':
        """Inverse of to_text (failed entries are not restored)."""
        header: Dict[str, str] = {}
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                if '=' in line:
                    key, value = (s.strip() for s in line[1:].split('=', 1))
                    header[key] = value
                continue
            v = [float(s) for s in line.split()]
            if len(v) != 6:
                raise ValueError(f"Malformed amplitude row: {line!r}")
            entries.append(AmplitudeEntry(x_in=(v[0], v[1]), x_fi=(v[2], v[3]), T=v[4], G=v[5]))
        params = ActionParams(
            mass=float(header['mass']), v0=float(header['v0']), v2=float(header['v2']),
            v22=float(header['v22']), v4=float(header['v4']),
        )
        grid = Grid2D(half_width=float(header['grid_half_width']), n=int(header['grid_n']))
        e_gr = header.get('ground_state_energy')
        return cls(params=params, grid=grid, tau=float(header['tau']), entries=entries,
                   ground_state_energy=float(e_gr) if e_gr is not None else None)


def _lattice(half: float, count: int) -> List[float]:
    return [float(v) for v in np.linspace(-half, half, count)]


_SYMMETRIES = (
    lambda x, y: (x, y), lambda x, y: (-x, y), lambda x, y: (x, -y), lambda x, y: (-x, -y),
    lambda x, y: (y, x), lambda x, y: (-y, x), lambda x, y: (y, -x), lambda x, y: (-y, -x),
)


def _orbit_key(x_in: Point, x_fi: Point) -> Tuple[float, ...]:
    images = []
    for g in _SYMMETRIES:
        a = g(*x_in)
        b = g(*x_fi)
        images.append(tuple(round(v, 12) + 0.0 for v in (*a, *b)))
    return min(images)


def default_boundary_pairs(
    source_half: float = 1.0,
    source_count: int = 3,
    sink_half: float = 1.5,
    sink_count: int = 5
) -> List[Tuple[Point, Point]]:
    """
    Sources on a lattice in [-1, 1]^2, sinks on a lattice in [-1.5, 1.5]^2.

    Pairs related by a joint reflection or x <-> y exchange of both points
    carry the same amplitude for any action of this family; only the first
    pair of each such class is kept.
    """
    sources = list(product(_lattice(source_half, source_count), repeat=2))
    sinks = list(product(_lattice(sink_half, sink_count), repeat=2))
    seen = set()
    pairs = []
    for s in sources:
        for f in sinks:
            key = _orbit_key(s, f)
            if key in seen:
                continue
            seen.add(key)
            pairs.append((s, f))
    return pairs


def amplitude_table(
    params: ActionParams,
    grid: Grid2D,
    T: float,
    boundary_pairs: Iterable[Tuple[Point, Point]],
    tau: float = 0.01,
    pool=None,
    with_ground_state: bool = False
) -> AmplitudeTable:
    """
    Tabulate G(x_fi, T; x_in, 0) over boundary pairs.

    One propagate call is made per distinct source (in parallel); each sink
    is read off by bilinear interpolation. A failed propagation marks every
    entry of that source with the error instead of aborting the table.

    Args:
        params: Action parameters
        grid: Spatial grid
        T: Imaginary time
        boundary_pairs: (x_in, x_fi) pairs
        tau: Maximum time slice
        pool: WorkerPool; the global pool by default
        with_ground_state: Also record E_gr in the table

    Returns:
        AmplitudeTable
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    pairs = [((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))) for a, b in boundary_pairs]
    for x_in, x_fi in pairs:
        if not (grid.contains(x_in) and grid.contains(x_fi)):
            raise ValueError(f"Boundary pair {x_in} -> {x_fi} lies outside the grid")
    if pool is None:
        from .workers import get_worker_pool
        pool = get_worker_pool()

    sources = list(dict.fromkeys(x_in for x_in, _ in pairs))
    logger.info(f"Propagating {len(sources)} sources to T={T:g} on a {grid.n}x{grid.n} grid")

    def run_source(source: Point):
        try:
            return propagate(params, grid, T, source, tau=tau)
        except QChaosError as e:
            return e

    fields = dict(zip(sources, pool.map(run_source, sources)))

    entries = []
    for x_in, x_fi in pairs:
        result = fields[x_in]
        if isinstance(result, Exception):
            logger.warning(f"Source {x_in} failed: {result}")
            entries.append(AmplitudeEntry(x_in=x_in, x_fi=x_fi, T=T, G=float('nan'), error=str(result)))
        else:
            entries.append(AmplitudeEntry(x_in=x_in, x_fi=x_fi, T=T, G=result.at(x_fi)))

    e_gr = ground_state_energy(params, grid, tau=tau) if with_ground_state else None
    return AmplitudeTable(params=params, grid=grid, tau=tau, entries=entries, ground_state_energy=e_gr)
