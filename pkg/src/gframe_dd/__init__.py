"""Dynamical decoupling of the g-frame (swap-coupled two-qubit) qubit:
device maps, flux-noise models, filter functions, pulse sequences,
time-domain simulation and fitting."""

__version__ = "0.1.0"
