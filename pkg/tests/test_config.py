#!/usr/bin/env python3
"""
Configuration tests for qchaos.
Verifies the experiment file format and the environment-driven settings.
"""

import os
import sys
import tempfile

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from qchaos.config import RuntimeSettings, load_config, parse_config
from qchaos.dynamics import ActionParams
from qchaos.exceptions import ConfigError


def _expect_error(text: str, key=None, line=None) -> ConfigError:
    try:
        parse_config(text)
    except ConfigError as e:
        assert e.key == key, (e.key, key)
        assert e.line == line, (e.line, line)
        return e
    raise AssertionError(f"{text!r} should be rejected")


def test_defaults():
    config = parse_config('')
    assert config.system == 'classical'
    assert config.params == ActionParams.classical()
    assert config.energies == [2.0, 4.0, 6.0, 8.0]
    assert config.propagator.grid.half_width == 8.0 and config.propagator.grid.n == 128
    assert config.propagator.transition_time == 4.5
    assert config.fit_mode == 'vvpm' and config.output_dir is None


def test_values_and_comments():
    config = parse_config(
        "# quantum run\n"
        "\n"
        "SYSTEM = quantum   # preset\n"
        "energies = 2, 4 6\n"
        "seed = 42\n"
        "scheme = leapfrog\n"
        "section_direction = -1\n"
    )
    assert config.system == 'quantum'
    assert config.params == ActionParams.quantum()
    assert config.energies == [2.0, 4.0, 6.0]
    assert config.seed == 42
    assert config.integrator.scheme == 'leapfrog'
    assert config.section.direction == -1


def test_explicit_system():
    config = parse_config("system = explicit\nmass = 2\nv2 = 0.3\nv22 = 0.1\n")
    assert config.params == ActionParams(mass=2.0, v0=0.0, v2=0.3, v22=0.1, v4=0.0)
    _expect_error("mass = 2\n", key='mass', line=1)


def test_invalid_lines():
    _expect_error("horizon = -5\n", key='horizon', line=1)
    _expect_error("n_samples = 10\nfoo = 1\n", key='foo', line=2)
    _expect_error("seed = 1\nseed = 2\n", key='seed', line=2)
    _expect_error("seed = -1\n", key='seed', line=1)
    _expect_error("grid_n = 100\n", key='grid_n', line=1)
    _expect_error("energies = 2, nan\n", key='energies', line=1)
    _expect_error("step 0.01\n", line=1)
    e = _expect_error("scheme = euler\n", key='scheme', line=1)
    assert 'line 1' in str(e) and "'scheme'" in str(e)


def test_canonical_text():
    a = parse_config("seed = 1\nenergies = 2 4\n")
    b = parse_config("energies = 2, 4   # same values\nseed = 1\n")
    assert a.canonical_text() == b.canonical_text()
    assert a.canonical_text() != a.with_seed(2).canonical_text()
    assert 'energies = 2.0, 4.0\n' in a.canonical_text()
    assert a.canonical_text().endswith('fit_mode = vvpm\n')


def test_load_config():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'run.cfg')
        with open(path, 'w', encoding='utf-8') as f:
            f.write("system = harmonic\norbits = 3\n")
        config = load_config(path)
    assert config.params == ActionParams.harmonic()
    assert config.orbits == 3


def test_runtime_settings_from_env():
    keys = ('QCHAOS_THREADS', 'QCHAOS_LOG_LEVEL', 'QCHAOS_OUTPUT_DIR')
    saved = {k: os.environ.get(k) for k in keys}
    try:
        os.environ.update(QCHAOS_THREADS='3', QCHAOS_LOG_LEVEL='debug', QCHAOS_OUTPUT_DIR='out')
        s = RuntimeSettings.from_env()
        assert (s.threads, s.log_level, s.output_dir) == (3, 'DEBUG', 'out')

        os.environ.update(QCHAOS_THREADS='many', QCHAOS_LOG_LEVEL='loud')
        s = RuntimeSettings.from_env()
        assert s.threads >= 1 and s.log_level == 'INFO'
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


def main():
    """Run all tests."""
    print("=" * 60)
    print("qchaos - configuration tests")
    print("=" * 60)

    tests = [
        test_defaults,
        test_values_and_comments,
        test_explicit_system,
        test_invalid_lines,
        test_canonical_text,
        test_load_config,
        test_runtime_settings_from_env,
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
