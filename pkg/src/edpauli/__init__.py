"""Pauli-equation dynamics with an entropic trajectory sampler and phase-space geometry."""

from .errors import (
    ContractError,
    DomainError,
    EdPauliError,
    NumericalError,
    StructuralError,
    ValidationError,
)
from .grid import EdParams, GaugeField, Grid, SpinorField, integrate
from .pauli import HamiltonianSpec, PotentialKernel, apply_hamiltonian, energy, evolve, step
from .rotations import (
    RotationSpec,
    orbital_angular_momentum,
    rotate_state,
    spin_functional,
    spin_matrix,
    su2_rotation,
)
from .sampler import TrajectoryEnsemble, drift_velocity, sample_step

__all__ = [
    "ContractError",
    "DomainError",
    "EdPauliError",
    "EdParams",
    "GaugeField",
    "Grid",
    "HamiltonianSpec",
    "NumericalError",
    "PotentialKernel",
    "RotationSpec",
    "SpinorField",
    "StructuralError",
    "TrajectoryEnsemble",
    "ValidationError",
    "apply_hamiltonian",
    "drift_velocity",
    "energy",
    "evolve",
    "integrate",
    "orbital_angular_momentum",
    "rotate_state",
    "sample_step",
    "spin_functional",
    "spin_matrix",
    "step",
    "su2_rotation",
]
