"""Spectral micro-macro simulator for the compressible FENE dumbbell model and
its incompressible limit under large volume viscosity."""
from .core import (
    CoupledState,
    Parameters,
    PolymerField,
    make_initial_data,
    matched_initial_data,
    momentum,
    operators_for,
    validate_params,
)
from .dynamics import Stepper, compressible_rhs, imex_step, incompressible_rhs, simulate
from .energy import EnergyTrace, compute_functionals, fit_decay, fit_power, weight_a, weight_b
from .linear import assemble_mode, eigen_decay, slow_rate_sweep
from .polymer import adjointness_residual, assemble_operators, build_basis, stress
from .spectral import SpectralField, leray_project, sobolev_norm

__version__ = "0.1.0"

__all__ = [
    "CoupledState",
    "EnergyTrace",
    "Parameters",
    "PolymerField",
    "SpectralField",
    "Stepper",
    "adjointness_residual",
    "assemble_mode",
    "assemble_operators",
    "build_basis",
    "compressible_rhs",
    "compute_functionals",
    "eigen_decay",
    "fit_decay",
    "fit_power",
    "imex_step",
    "incompressible_rhs",
    "leray_project",
    "make_initial_data",
    "matched_initial_data",
    "momentum",
    "operators_for",
    "simulate",
    "slow_rate_sweep",
    "sobolev_norm",
    "stress",
    "validate_params",
    "weight_a",
    "weight_b",
]
