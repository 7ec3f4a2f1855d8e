"""Numerical toolkit for thermostatted rotator lattices with alternated spins."""

from .lattice import Lattice, WeightedNormParams, build_lattice, spin_sign, weighted_norm
from .model import (
    AssumptionWarning,
    Dissipation,
    Frequency,
    ModelSpec,
    Potential,
    diagonal,
    drift_full,
    example2,
    grad_full,
    hamiltonian,
    linear_coupled,
    linear_potential,
    local_energy,
    power_frequency,
    sqrt_potential,
)

__version__ = "0.1.0"
