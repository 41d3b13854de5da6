"""Spectral solvers for mass-constrained ground states and dynamics of
coupled Hartree-type Schrodinger systems."""

from .errors import (
    BoundaryMassError,
    ConfigError,
    ConvergenceError,
    DriftError,
    FitError,
    HypothesisError,
    InsufficientSamplesError,
    NoCriticalPointError,
    ZeroMassError,
)
from .functionals import FunctionalBreakdown, ModelParams
from .grid import ComplexField3, GridSpec, PairState

__all__ = [
    "BoundaryMassError",
    "ComplexField3",
    "ConfigError",
    "ConvergenceError",
    "DriftError",
    "FitError",
    "FunctionalBreakdown",
    "GridSpec",
    "HypothesisError",
    "InsufficientSamplesError",
    "ModelParams",
    "NoCriticalPointError",
    "PairState",
    "ZeroMassError",
]

__version__ = "0.1.0"
