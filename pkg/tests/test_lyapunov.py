#!/usr/bin/env python3
"""
Tests for the tangent-flow Lyapunov exponent.
"""

import sys
import os

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import numpy as np

from qchaos.dynamics import ActionParams, IntegratorConfig, PhaseState, shell_energy
from qchaos.ensemble import ShellSampler
from qchaos.exceptions import DegenerateTangentError
from qchaos.lyapunov import FtleRecord, ftle, jacobian, random_direction, two_trajectory_ftle

CLASSICAL = ActionParams.classical()


def test_jacobian_at_origin():
    J = jacobian(CLASSICAL, PhaseState(0.0, 0.0, 0.0, 0.0))
    expected = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
    ])
    assert np.array_equal(J, expected)


def test_jacobian_is_traceless():
    rng = np.random.default_rng(3)
    p = ActionParams.quantum()
    for _ in range(20):
        s = PhaseState(*rng.uniform(-2, 2, size=4))
        J = jacobian(p, s)
        assert np.trace(J) == 0.0
        # lower-left block is minus the Hessian, symmetric
        assert J[2, 1] == J[3, 0]

    J = jacobian(CLASSICAL, PhaseState(1.0, 1.0, 0.0, 0.0))
    assert np.array_equal(-J[2:, :2], np.array([[1.5, 1.0], [1.0, 1.5]]))


def test_integrable_exponent_is_small():
    """Decoupled oscillators have no exponential separation."""
    harmonic = ActionParams.harmonic()
    s0 = PhaseState(1.2, 0.4, 0.9, -1.1)
    record = ftle(harmonic, s0, 2000.0)
    assert isinstance(record, FtleRecord)
    assert record.exponent < 0.01
    assert record.horizon == 2000.0
    assert record.energy == shell_energy(harmonic, s0)


def _chaotic_starts(count: int, energy: float = 6.0):
    return [ShellSampler(CLASSICAL, energy, seed=seed).sample() for seed in range(count)]


def test_tangent_agrees_with_two_trajectory_estimate():
    """Both estimators see the same growth rate, seed by seed."""
    cfg = IntegratorConfig(step=2e-3)
    for s0 in [PhaseState(0.0, 2.5, 3.0, 1.0)] + _chaotic_starts(10):
        tangent = ftle(CLASSICAL, s0, 400.0, cfg, renorm_every=50)
        neighbour = two_trajectory_ftle(CLASSICAL, s0, 400.0, cfg, separation=1e-8, renorm_every=50)
        tolerance = max(0.1 * abs(tangent.exponent), 5e-3)
        assert abs(tangent.exponent - neighbour.exponent) < tolerance, (s0, tangent.exponent, neighbour.exponent)


def test_renormalization_cadence_is_irrelevant():
    """The accumulated log-norm does not depend on where renormalization happens."""
    cfg = IntegratorConfig(step=2e-3)
    s0 = PhaseState(0.3, 1.5, 1.0, 0.5)
    a = ftle(CLASSICAL, s0, 100.0, cfg, renorm_every=1)
    b = ftle(CLASSICAL, s0, 100.0, cfg, renorm_every=97)
    assert abs(a.exponent - b.exponent) < 1e-10

    for s0 in _chaotic_starts(20):
        every_10 = ftle(CLASSICAL, s0, 500.0, cfg, renorm_every=10)
        every_100 = ftle(CLASSICAL, s0, 500.0, cfg, renorm_every=100)
        assert abs(every_10.exponent - every_100.exponent) < 1e-3, s0


def test_exponent_is_independent_of_initial_direction():
    """Generic tangent directions all align with the leading one."""
    rng = np.random.default_rng(29)
    cfg = IntegratorConfig(step=2e-3)
    for s0 in _chaotic_starts(5):
        first = ftle(CLASSICAL, s0, 2000.0, cfg, direction=random_direction(rng))
        second = ftle(CLASSICAL, s0, 2000.0, cfg, direction=random_direction(rng))
        assert abs(first.exponent - second.exponent) < 5e-3, (s0, first.exponent, second.exponent)


def test_direction_handling():
    s0 = PhaseState(0.3, 1.5, 1.0, 0.5)
    try:
        ftle(CLASSICAL, s0, 10.0, direction=(0.0, 0.0, 0.0, 0.0))
    except DegenerateTangentError:
        pass
    else:
        raise AssertionError("zero tangent direction should raise")

    v = random_direction(np.random.default_rng(11))
    assert v.shape == (4,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-15
    record = ftle(CLASSICAL, s0, 10.0, direction=v)
    assert np.isfinite(record.exponent)


def test_invalid_arguments():
    s0 = PhaseState(0.3, 1.5, 1.0, 0.5)
    for kwargs in (dict(horizon=0.0), dict(horizon=-1.0), dict(horizon=1.0, renorm_every=0)):
        try:
            ftle(CLASSICAL, s0, **kwargs)
        except ValueError:
            continue
        raise AssertionError(f"ftle({kwargs}) should raise ValueError")


def main():
    """Run all tests."""
    print("=" * 60)
    print("qchaos - Lyapunov tests")
    print("=" * 60)

    tests = [
        test_jacobian_at_origin,
        test_jacobian_is_traceless,
        test_integrable_exponent_is_small,
        test_tangent_agrees_with_two_trajectory_estimate,
        test_renormalization_cadence_is_irrelevant,
        test_exponent_is_independent_of_initial_direction,
        test_direction_handling,
        test_invalid_arguments,
    ]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"✅ PASS: {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"❌ FAIL: {test.__name__} - {e!r}")

    print("=" * 60)
    return 1 if failed else 0


if __name__ == '__main__':
    sys.exit(main())
