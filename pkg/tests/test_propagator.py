#!/usr/bin/env python3
"""
Tests for the imaginary-time propagator and amplitude tables.
"""

import sys
import os
import math

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import numpy as np

from qchaos.dynamics import ActionParams
from qchaos.exceptions import GridTooSmallError
from qchaos.propagator import (
    AmplitudeTable,
    Grid2D,
    amplitude_table,
    default_boundary_pairs,
    ground_state_energy,
    harmonic_kernel,
    propagate,
)
from qchaos.workers import WorkerPool

CLASSICAL = ActionParams.classical()
HARMONIC = ActionParams.harmonic()
GRID = Grid2D()
T = 4.5


def _harmonic_error(tau: float) -> float:
    """Largest relative deviation from the closed-form kernel on |x|, |y| <= 2."""
    field = propagate(HARMONIC, GRID, T, (0.0, 0.0), tau=tau)
    axis = GRID.axis
    inner = np.abs(axis) <= 2.0
    kx = harmonic_kernel(1.0, 1.0, axis[inner], 0.0, T)
    exact = np.outer(kx, kx)
    values = field.values[np.ix_(inner, inner)]
    return float(np.max(np.abs(values / exact - 1.0)))


def test_grid_validation():
    for kwargs in (dict(n=16), dict(n=48), dict(half_width=0.0)):
        try:
            Grid2D(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"Grid2D({kwargs}) should raise")
    assert GRID.spacing == 0.125
    assert GRID.axis[0] == -8.0 and GRID.axis[64] == 0.0
    assert GRID.contains((1.5, -1.5)) and not GRID.contains((8.0, 0.0))


def test_harmonic_oracle():
    assert _harmonic_error(0.01) < 1e-4


def test_second_order_in_tau():
    errors = [_harmonic_error(tau) for tau in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.5 < coarse / fine < 4.5, errors


def test_kernel_is_positive_and_symmetric():
    a, b = (1.0, 0.0), (-0.5, 1.5)
    from_a = propagate(CLASSICAL, GRID, T, a)
    from_b = propagate(CLASSICAL, GRID, T, b)
    assert from_a.at(b) > 0
    assert abs(from_a.at(b) / from_b.at(a) - 1.0) < 1e-10
    assert from_a.boundary_ratio < 1e-12


def test_parity():
    a = (0.75, -0.5)
    minus_a = (-0.75, 0.5)
    g1 = propagate(CLASSICAL, GRID, T, a).at(minus_a)
    g2 = propagate(CLASSICAL, GRID, T, minus_a).at(a)
    assert abs(g1 / g2 - 1.0) < 1e-10


def test_read_off_is_exact_on_nodes():
    field = propagate(CLASSICAL, GRID, 1.0, (0.0, 0.0))
    i, j = 72, 60
    assert field.at((GRID.axis[i], GRID.axis[j])) == field.values[i, j]


def test_propagate_errors():
    try:
        propagate(CLASSICAL, GRID, 0.0, (0.0, 0.0))
    except ValueError:
        pass
    else:
        raise AssertionError("T = 0 should raise")

    try:
        propagate(CLASSICAL, Grid2D(half_width=3.0, n=32), T, (0.0, 0.0))
    except GridTooSmallError as e:
        assert e.ratio > 1e-12
    else:
        raise AssertionError("a 3-wide grid should leak")


def test_ground_state_energy():
    e_harmonic = ground_state_energy(HARMONIC, GRID)
    assert abs(e_harmonic - 1.0) < 1e-4

    shifted = ground_state_energy(HARMONIC.replace(v0=0.7), GRID)
    assert abs(shifted - e_harmonic - 0.7) < 1e-9


def test_large_time_decay_rate():
    e_gr = ground_state_energy(CLASSICAL, GRID)
    g8 = propagate(CLASSICAL, GRID, 8.0, (0.0, 0.0)).at((0.0, 0.0))
    g9 = propagate(CLASSICAL, GRID, 9.0, (0.0, 0.0)).at((0.0, 0.0))
    assert abs(g9 / g8 / math.exp(-e_gr) - 1.0) < 1e-4


def test_grid_refinement():
    coarse = propagate(CLASSICAL, GRID, T, (0.5, 0.0))
    fine = propagate(CLASSICAL, Grid2D(8.0, 256), T, (0.5, 0.0))
    for point in ((0.0, 0.0), (1.5, -0.75), (-1.0, 1.0)):
        assert abs(fine.at(point) / coarse.at(point) - 1.0) < 1e-5


def test_default_boundary_pairs():
    pairs = default_boundary_pairs()
    assert len(pairs) == 36
    assert len(set(pairs)) == 36
    for x_in, x_fi in pairs:
        assert max(abs(c) for c in x_in) <= 1.0
        assert max(abs(c) for c in x_fi) <= 1.5
        assert GRID.contains(x_in) and GRID.contains(x_fi)


def test_amplitude_table():
    sources = [(-1.0, -1.0), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    sinks = [(x, y) for x in (-1.5, -0.75, 0.0, 0.75, 1.5) for y in (-1.5, -0.75, 0.0, 0.75, 1.5)]
    pairs = [(s, f) for s in sources for f in sinks]
    table = amplitude_table(HARMONIC, GRID, T, pairs, pool=WorkerPool(2))
    assert len(table.entries) == 100
    assert all(e.ok and e.G > 0 for e in table.entries)

    for e in table.entries:
        exact = (harmonic_kernel(1.0, 1.0, e.x_fi[0], e.x_in[0], T)
                 * harmonic_kernel(1.0, 1.0, e.x_fi[1], e.x_in[1], T))
        assert abs(e.G / exact - 1.0) < 1e-4


def test_table_text_format():
    pairs = default_boundary_pairs()[:6]
    table = amplitude_table(CLASSICAL, GRID, T, pairs, pool=WorkerPool(1), with_ground_state=True)
    text = table.to_text()
    assert '# dynamical_time_scale = ' in text
    rows = [line for line in text.splitlines() if not line.startswith('#')]
    assert len(rows) == 6 and all(len(r.split()) == 6 for r in rows)

    parsed = AmplitudeTable.from_text(text)
    assert parsed.params == CLASSICAL and parsed.grid == GRID and parsed.tau == table.tau
    assert parsed.ground_state_energy == table.ground_state_energy
    assert [e.G for e in parsed.entries] == [e.G for e in table.entries]


def main():
    """Run all tests."""
    print("=" * 60)
    print("qchaos - propagator tests")
    print("=" * 60)

    tests = [
        test_grid_validation,
        test_harmonic_oracle,
        test_second_order_in_tau,
        test_kernel_is_positive_and_symmetric,
        test_parity,
        test_read_off_is_exact_on_nodes,
        test_propagate_errors,
        test_ground_state_energy,
        test_large_time_decay_rate,
        test_grid_refinement,
        test_default_boundary_pairs,
        test_amplitude_table,
        test_table_text_format,
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
