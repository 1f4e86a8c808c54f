"""Nonlinear MPC under plant-model mismatch: simulation and stability certification."""

__version__ = "0.1.0"
