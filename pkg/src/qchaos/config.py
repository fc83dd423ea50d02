"""
Configuration module for qchaos.
Centralizes environment-driven runtime settings and the experiment
configuration file format.
"""

import os
import math
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .dynamics import SCHEMES, ActionParams, IntegratorConfig
from .exceptions import ConfigError
from .poincare import DEFAULT_MAX_TIME, SectionSpec
from .propagator import Grid2D, PropagatorConfig

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

SYSTEMS = ('classical', 'quantum', 'harmonic', 'explicit')
FIT_MODES = ('vvpm', 'nuisance')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


@dataclass
class RuntimeSettings:
    """Process-level settings that never influence output bytes."""

    threads: int
    log_level: str = 'INFO'
    output_dir: str = 'results'

    @classmethod
    def from_env(cls) -> 'RuntimeSettings':
        """
        Create settings from environment variables.

        Returns:
            RuntimeSettings instance
        """
        threads = os.cpu_count() or 1
        raw_threads = os.getenv('QCHAOS_THREADS')
        if raw_threads:
            try:
                threads = max(1, int(raw_threads))
            except ValueError:
                logger.warning(f"Invalid QCHAOS_THREADS '{raw_threads}', using {threads}")

        log_level = os.getenv('QCHAOS_LOG_LEVEL', 'INFO').upper()
        if log_level not in LOG_LEVELS:
            logger.warning(f"Invalid QCHAOS_LOG_LEVEL '{log_level}', defaulting to 'INFO'")
            log_level = 'INFO'

        output_dir = os.getenv('QCHAOS_OUTPUT_DIR', 'results')

        return cls(threads=threads, log_level=log_level, output_dir=output_dir)


# Global settings instance
settings = RuntimeSettings.from_env()


@dataclass
class ExperimentConfig:
    """A fully resolved experiment configuration."""

    system: str = 'classical'
    v22: float = 0.25
    explicit_params: Optional[ActionParams] = None
    energies: List[float] = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    n_samples: int = 500
    horizon: float = 20000.0
    lambda_c: float = 5e-3
    seed: int = 0
    integrator: IntegratorConfig = IntegratorConfig()
    renorm_every: int = 100
    section: SectionSpec = SectionSpec()
    crossings: int = 200
    orbits: int = 20
    max_time: float = DEFAULT_MAX_TIME
    propagator: PropagatorConfig = PropagatorConfig()
    bvp_steps: int = 2000
    fit_mode: str = 'vvpm'
    output_dir: Optional[str] = None

    def params_for(self, system: Optional[str] = None) -> ActionParams:
        """
        Resolve a system name to its action parameters.

        Args:
            system: Preset name; defaults to the configured system

        Returns:
            ActionParams
        """
        system = system or self.system
        if system == 'classical':
            return ActionParams.classical(self.v22)
        if system == 'quantum':
            return ActionParams.quantum()
        if system == 'harmonic':
            return ActionParams.harmonic()
        if system == 'explicit' and self.explicit_params is not None:
            return self.explicit_params
        raise ConfigError(f"Cannot resolve parameters for system '{system}'", key='system')

    @property
    def params(self) -> ActionParams:
        return self.params_for()

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        _check_seed(seed, None)
        return replace(self, seed=seed)

    def canonical_text(self) -> str:
        """Deterministic key = value rendering of every resolved setting."""
        p = self.params
        g = self.propagator
        lines = [
            f"system = {self.system}",
            f"mass = {p.mass!r}",
            f"v0 = {p.v0!r}",
            f"v2 = {p.v2!r}",
            f"v22 = {p.v22!r}",
            f"v4 = {p.v4!r}",
            f"energies = {', '.join(repr(e) for e in self.energies)}",
            f"n_samples = {self.n_samples}",
            f"horizon = {self.horizon!r}",
            f"lambda_c = {self.lambda_c!r}",
            f"seed = {self.seed}",
            f"step = {self.integrator.step!r}",
            f"scheme = {self.integrator.scheme}",
            f"renorm_every = {self.renorm_every}",
            f"section_coordinate = {self.section.coordinate}",
            f"section_value = {self.section.value!r}",
            f"section_direction = {self.section.direction}",
            f"crossings = {self.crossings}",
            f"orbits = {self.orbits}",
            f"max_time = {self.max_time!r}",
            f"grid_half_width = {g.grid.half_width!r}",
            f"grid_n = {g.grid.n}",
            f"tau = {g.tau!r}",
            f"transition_time = {g.transition_time!r}",
            f"bvp_steps = {self.bvp_steps}",
            f"fit_mode = {self.fit_mode}",
        ]
        return '\n'.join(lines) + '\n'


def _parse_float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"'{raw}' is not a finite number")
    return value


def _parse_int(raw: str) -> int:
    return int(raw)


def _parse_floats(raw: str) -> List[float]:
    parts = [p for p in raw.replace(',', ' ').split() if p]
    if not parts:
        raise ValueError("expected at least one number")
    return [_parse_float(p) for p in parts]


def _parse_choice(choices: Tuple[str, ...]) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip().lower()
        if value not in choices:
            raise ValueError(f"'{raw}' is not one of {', '.join(choices)}")
        return value
    return parse


def _parse_direction(raw: str) -> int:
    value = int(raw.strip().lstrip('+'))
    if value not in (1, -1):
        raise ValueError(f"'{raw}' is not +1 or -1")
    return value


def _check_seed(seed: int, line: Optional[int]) -> None:
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}", key='seed', line=line)


# key -> (parser, invariant check returning an error message or None)
_KEYS: Dict[str, Tuple[Callable[[str], object], Callable[[object], Optional[str]]]] = {
    'system': (_parse_choice(SYSTEMS), lambda v: None),
    'v22': (_parse_float, lambda v: None),
    'mass': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'v0': (_parse_float, lambda v: None),
    'v2': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'v4': (_parse_float, lambda v: None),
    'energies': (_parse_floats, lambda v: None if all(e > 0 for e in v) else "energies must be positive"),
    'n_samples': (_parse_int, lambda v: None if v >= 1 else "must be >= 1"),
    'horizon': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'lambda_c': (_parse_float, lambda v: None if v >= 0 else "must be non-negative"),
    'seed': (_parse_int, lambda v: None if 0 <= v < 2 ** 64 else "must be a 64-bit unsigned integer"),
    'step': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'scheme': (_parse_choice(SCHEMES), lambda v: None),
    'renorm_every': (_parse_int, lambda v: None if v >= 1 else "must be >= 1"),
    'section_coordinate': (_parse_choice(('x', 'y')), lambda v: None),
    'section_value': (_parse_float, lambda v: None),
    'section_direction': (_parse_direction, lambda v: None),
    'crossings': (_parse_int, lambda v: None if v >= 1 else "must be >= 1"),
    'orbits': (_parse_int, lambda v: None if v >= 1 else "must be >= 1"),
    'max_time': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'grid_half_width': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'grid_n': (_parse_int, lambda v: None if v >= 32 and v & (v - 1) == 0 else "must be a power of two >= 32"),
    'tau': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'transition_time': (_parse_float, lambda v: None if v > 0 else "must be positive"),
    'bvp_steps': (_parse_int, lambda v: None if v >= 10 and v % 2 == 0 else "must be an even number >= 10"),
    'fit_mode': (_parse_choice(FIT_MODES), lambda v: None),
    'output_dir': (str, lambda v: None if v else "must not be empty"),
}

_EXPLICIT_ONLY = ('mass', 'v0', 'v2', 'v4')


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse an experiment configuration.

    The format is UTF-8 `key = value` lines; `#` starts a comment. Keys not
    given take their defaults.

    Args:
        text: Configuration file contents

    Returns:
        Fully resolved ExperimentConfig

    Raises:
        ConfigError: Unknown key, malformed value or violated invariant,
            naming the line and key
    """
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}

    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError("expected 'key = value'", line=number)
        key, raw_value = (part.strip() for part in line.split('=', 1))
        key = key.lower()
        if key not in _KEYS:
            raise ConfigError("unknown key", key=key, line=number)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=number)
        parser, check = _KEYS[key]
        try:
            value = parser(raw_value)
        except ValueError as e:
            raise ConfigError(f"malformed value: {e}", key=key, line=number) from e
        problem = check(value)
        if problem:
            raise ConfigError(f"invalid value {raw_value!r}: {problem}", key=key, line=number)
        values[key] = value
        lines[key] = number

    system = values.get('system', 'classical')
    for key in _EXPLICIT_ONLY:
        if key in values and system != 'explicit':
            raise ConfigError("only allowed with system = explicit", key=key, line=lines[key])

    def build(key: str, factory):
        try:
            return factory()
        except ValueError as e:
            raise ConfigError(str(e), key=key, line=lines.get(key)) from e

    defaults = ExperimentConfig()
    v22 = values.get('v22', defaults.v22)
    explicit_params = None
    if system == 'explicit':
        explicit_params = build('system', lambda: ActionParams(
            mass=values.get('mass', 1.0),
            v0=values.get('v0', 0.0),
            v2=values.get('v2', 0.5),
            v22=v22,
            v4=values.get('v4', 0.0),
        ))

    integrator = build('step', lambda: IntegratorConfig(
        step=values.get('step', defaults.integrator.step),
        scheme=values.get('scheme', defaults.integrator.scheme),
    ))
    section = build('section_coordinate', lambda: SectionSpec(
        coordinate=values.get('section_coordinate', defaults.section.coordinate),
        value=values.get('section_value', defaults.section.value),
        direction=values.get('section_direction', defaults.section.direction),
    ))
    propagator = build('grid_n', lambda: PropagatorConfig(
        grid=Grid2D(
            half_width=values.get('grid_half_width', defaults.propagator.grid.half_width),
            n=values.get('grid_n', defaults.propagator.grid.n),
        ),
        tau=values.get('tau', defaults.propagator.tau),
        transition_time=values.get('transition_time', defaults.propagator.transition_time),
    ))

    config = ExperimentConfig(
        system=system,
        v22=v22,
        explicit_params=explicit_params,
        energies=values.get('energies', defaults.energies),
        n_samples=values.get('n_samples', defaults.n_samples),
        horizon=values.get('horizon', defaults.horizon),
        lambda_c=values.get('lambda_c', defaults.lambda_c),
        seed=values.get('seed', defaults.seed),
        integrator=integrator,
        renorm_every=values.get('renorm_every', defaults.renorm_every),
        section=section,
        crossings=values.get('crossings', defaults.crossings),
        orbits=values.get('orbits', defaults.orbits),
        max_time=values.get('max_time', defaults.max_time),
        propagator=propagator,
        bvp_steps=values.get('bvp_steps', defaults.bvp_steps),
        fit_mode=values.get('fit_mode', defaults.fit_mode),
        output_dir=values.get('output_dir'),
    )
    logger.debug(f"Configuration parsed - system: {config.system}, seed: {config.seed}")
    return config


def load_config(path: str) -> ExperimentConfig:
    """Read and parse a configuration file."""
    return parse_config(Path(path).read_text(encoding='utf-8'))
