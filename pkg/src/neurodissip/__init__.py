"""Stability analysis and identification of discrete-time neural dynamics.

The package treats a multilayer perceptron as a dynamical system
x_{t+1} = f(x_t), rewrites it exactly at any point as an affine map, and
turns that form into stability verdicts, certificates, equilibrium
bounds, and phase-portrait tooling.  Structured weight draws with
eigenvalue or singular-value guarantees, two benchmark plants, and a
from-scratch trainer for block state-space models round out the library;
the ``neurodissip`` console script drives all of it from JSON configs.
"""
