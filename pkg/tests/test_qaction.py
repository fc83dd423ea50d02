#!/usr/bin/env python3
"""
Tests for Euclidean boundary-value paths and the quantum-action fit.
"""

import sys
import os
import math

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import numpy as np

from qchaos.dynamics import ActionParams
from qchaos.exceptions import UnderdeterminedFitError
from qchaos.propagator import (
    AmplitudeEntry,
    AmplitudeTable,
    Grid2D,
    amplitude_table,
    default_boundary_pairs,
    harmonic_kernel,
)
from qchaos.qaction import (
    DEFAULT_BOUNDS,
    AmplitudeModel,
    FitResult,
    fit,
    format_fit_report,
    log_model_amplitude,
    mixed_hessian,
    mixed_hessian_fd,
    model_amplitude,
    solve_bvp,
)
from qchaos.workers import WorkerPool

CLASSICAL = ActionParams.classical()
HARMONIC = ActionParams.harmonic()
T = 4.5
N = 400


def _harmonic_action(a, b, t):
    s, c = math.sinh(t), math.cosh(t)
    return sum(((ai * ai + bi * bi) * c - 2.0 * ai * bi) / (2.0 * s) for ai, bi in zip(a, b))


def test_path_at_the_origin():
    q = ActionParams.quantum()
    traj = solve_bvp(q, (0.0, 0.0), (0.0, 0.0), T, N)
    assert np.max(np.abs(traj.samples[:, 1:])) == 0.0
    assert abs(traj.action_value - q.v0 * T) < 1e-12


def test_harmonic_path_and_action():
    a, b = (0.5, -0.3), (1.0, 0.4)
    traj = solve_bvp(HARMONIC, a, b, T, N)
    assert traj.method == 'shooting'
    assert traj.boundary_error < 1e-12

    t = traj.samples[:, 0]
    for i in range(2):
        exact = (a[i] * np.sinh(T - t) + b[i] * np.sinh(t)) / math.sinh(T)
        assert np.max(np.abs(traj.samples[:, 1 + i] - exact)) < 1e-7

    expected = _harmonic_action(a, b, T)
    assert abs(traj.action_value / expected - 1.0) < 1e-6


def test_euclidean_energy_is_conserved():
    traj = solve_bvp(CLASSICAL, (1.0, 0.0), (-0.75, 1.5), T, N)
    energy = traj.euclidean_energy(CLASSICAL)
    assert np.max(np.abs(energy - energy[0])) < 1e-8


def test_time_reversal():
    a, b = (1.0, -1.0), (0.0, 1.5)
    forward = solve_bvp(CLASSICAL, a, b, T, N)
    backward = solve_bvp(CLASSICAL, b, a, T, N)
    assert abs(forward.action_value / backward.action_value - 1.0) < 1e-6

    mirrored = forward.reversed()
    assert mirrored.boundary == (b, a)
    assert np.max(np.abs(mirrored.samples[:, 1:] - backward.samples[:, 1:])) < 1e-6


def test_action_gradient_is_final_momentum():
    a, b, h = (0.5, 0.0), (1.0, 0.5), 1e-4
    traj = solve_bvp(CLASSICAL, a, b, T, N)
    for i in range(2):
        up = list(b)
        down = list(b)
        up[i] += h
        down[i] -= h
        derivative = (solve_bvp(CLASSICAL, a, tuple(up), T, N).action_value
                      - solve_bvp(CLASSICAL, a, tuple(down), T, N).action_value) / (2 * h)
        assert abs(derivative - CLASSICAL.mass * traj.final_velocity[i]) < 1e-5


def test_harmonic_model_is_exact():
    """With v0 equal to the zero-point energy omega, the model is the oscillator kernel."""
    trial = HARMONIC.replace(v0=HARMONIC.omega)
    for a, b in (((0.0, 0.0), (0.0, 0.0)), ((1.0, -1.0), (-0.75, 1.5))):
        g = model_amplitude(trial, a, b, T, N)
        exact = harmonic_kernel(1.0, 1.0, b[0], a[0], T) * harmonic_kernel(1.0, 1.0, b[1], a[1], T)
        assert abs(g / exact - 1.0) < 1e-6

    # without the offset the model decays more slowly by exactly exp(omega T)
    a, b = (0.5, 0.0), (0.0, -1.0)
    gap = log_model_amplitude(HARMONIC, a, b, T, N) - log_model_amplitude(trial, a, b, T, N)
    assert abs(gap - HARMONIC.omega * T) < 1e-10


def test_amplitude_is_symmetric():
    a, b = (1.0, 0.0), (-0.75, 1.5)
    forward = log_model_amplitude(CLASSICAL, a, b, T, 2000)
    backward = log_model_amplitude(CLASSICAL, b, a, T, 2000)
    assert abs(forward - backward) < 1e-8

    unit = solve_bvp(HARMONIC, (0.0, 0.0), (1.0, 0.0), T, N).action_value
    assert abs(unit - 0.5 / math.tanh(T)) < 1e-7


def test_mixed_hessian_variational_matches_finite_difference():
    a, b, t = (0.5, 0.0), (1.0, 0.5), 2.0
    traj = solve_bvp(CLASSICAL, a, b, t, N)
    variational = mixed_hessian(CLASSICAL, traj)
    numerical = mixed_hessian_fd(CLASSICAL, a, b, t, N)
    assert np.max(np.abs(variational - numerical)) < 1e-6
    # rows index x_in and columns x_fi in both; the off-diagonal pair is not symmetric
    assert abs(variational[0, 1] - variational[1, 0]) > 1e-5
    assert abs(variational[0, 1] - numerical[0, 1]) < 1e-6

    exact = -HARMONIC.mass / math.sinh(t)
    m = mixed_hessian(HARMONIC, solve_bvp(HARMONIC, a, b, t, N))
    assert abs(m[0, 0] - exact) < 1e-8 and abs(m[0, 1]) < 1e-8

    via_fd = AmplitudeModel(CLASSICAL, t, N, mixed='finite-difference').log_amplitude(a, b)
    assert abs(via_fd - AmplitudeModel(CLASSICAL, t, N).log_amplitude(a, b)) < 1e-3


def test_constant_shift_scales_the_amplitude():
    a, b, c = (0.5, 0.5), (-1.0, 0.75), 0.8
    base = log_model_amplitude(CLASSICAL, a, b, T, N)
    shifted = log_model_amplitude(CLASSICAL.replace(v0=c), a, b, T, N)
    assert abs(base - shifted - c * T) < 1e-10


def test_invalid_arguments():
    for kwargs in (dict(T=0.0, n_steps=N), dict(T=T, n_steps=401), dict(T=T, n_steps=0)):
        try:
            solve_bvp(CLASSICAL, (0.0, 0.0), (1.0, 0.0), **kwargs)
        except ValueError:
            continue
        raise AssertionError(f"solve_bvp({kwargs}) should raise")
    try:
        AmplitudeModel(CLASSICAL, T, N, mixed='exact')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mixed method should raise")


def _synthetic_table(params, pairs):
    entries = [
        AmplitudeEntry(x_in=a, x_fi=b, T=T, G=math.exp(log_model_amplitude(params, a, b, T, N)))
        for a, b in pairs
    ]
    return AmplitudeTable(params=params, grid=Grid2D(), tau=0.01, entries=entries, ground_state_energy=1.0)


def test_fit_needs_enough_amplitudes():
    table = _synthetic_table(CLASSICAL, default_boundary_pairs()[:1])
    try:
        fit(table, pool=WorkerPool(1), n_steps=N)
    except UnderdeterminedFitError:
        pass
    else:
        raise AssertionError("one amplitude cannot fix five parameters")


def test_fit_recovers_generating_action():
    target = ActionParams(mass=1.0, v0=1.0, v2=0.5, v22=0.25, v4=0.0)
    table = _synthetic_table(target, default_boundary_pairs()[::3])
    start = ActionParams(mass=1.03, v0=1.05, v2=0.52, v22=0.27, v4=0.005)
    result = fit(table, initial=start, pool=WorkerPool(2), n_steps=N)

    assert result.metadata['mode'] == 'vvpm' and not result.metadata['prefactor_fallback']
    assert result.metadata['entries'] == 12 and result.metadata['dropped'] == 0
    history = result.metadata['history']
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert result.residual < 1e-8
    for got, want in zip(result.params.as_array(), target.as_array()):
        assert abs(got - want) < 1e-6, (got, want)


def test_harmonic_table_fit_puts_ground_state_energy_in_v0():
    pool = WorkerPool(2)
    table = amplitude_table(HARMONIC, Grid2D(), T, default_boundary_pairs()[::3], pool=pool,
                            with_ground_state=True)
    assert abs(table.ground_state_energy - 1.0) < 1e-4

    start = ActionParams(mass=1.02, v0=0.9, v2=0.52, v22=0.02, v4=0.003)
    result = fit(table, initial=start, pool=pool, n_steps=N)
    assert result.metadata['mode'] == 'vvpm'

    low, high = DEFAULT_BOUNDS['v0']
    assert low + 0.1 < result.params.v0 < high - 0.1
    assert abs(result.params.v0 - table.ground_state_energy) < 1e-3
    for got, want in zip(result.params.as_array(), (1.0, 1.0, 0.5, 0.0, 0.0)):
        assert abs(got - want) < 1e-3, (got, want)


def test_format_fit_report():
    result = FitResult(
        params=ActionParams.quantum(),
        errors={'mass': 0.01, 'v0': 0.002, 'v2': 0.003, 'v22': 0.004, 'v4': 0.0005},
        residual=0.125,
        metadata={'mode': 'vvpm', 'prefactor_fallback': False, 'entries': 36, 'dropped': 0, 'iterations': 7},
    )
    lines = format_fit_report(result, CLASSICAL).splitlines()
    assert lines[0] == 'parameter,classical,fitted,error'
    rows = {line.split(',')[0]: line.split(',')[1:] for line in lines[1:6]}
    assert list(rows) == ['mass', 'v0', 'v2', 'v22', 'v4']
    assert [float(v) for v in rows['mass']] == [1.0, 0.976, 0.01]
    assert [float(v) for v in rows['v22']] == [0.25, 0.2469, 0.004]
    assert '# residual = 0.125' in lines
    assert '# mode = vvpm' in lines and '# entries = 36' in lines

    bare = format_fit_report(result).splitlines()
    v0_row = bare[2].split(',')
    assert v0_row[:2] == ['v0', ''] and float(v0_row[2]) == 1.3992


def main():
    """Run all tests."""
    print("=" * 60)
    print("qchaos - quantum action tests")
    print("=" * 60)

    tests = [
        test_path_at_the_origin,
        test_harmonic_path_and_action,
        test_euclidean_energy_is_conserved,
        test_time_reversal,
        test_action_gradient_is_final_momentum,
        test_harmonic_model_is_exact,
        test_amplitude_is_symmetric,
        test_mixed_hessian_variational_matches_finite_difference,
        test_constant_shift_scales_the_amplitude,
        test_invalid_arguments,
        test_fit_needs_enough_amplitudes,
        test_fit_recovers_generating_action,
        test_harmonic_table_fit_puts_ground_state_energy_in_v0,
        test_format_fit_report,
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
