"""
qchaos - chaos in an anharmonically coupled 2-D oscillator, classical
action versus quantum action.

This package provides the symplectic dynamics, Lyapunov and Poincaré
tooling, the imaginary-time propagator and the quantum-action fitter,
plus a command-line front end that writes plot-ready data files.
"""

__version__ = '1.0.0'
