"""Pseudo-spectral simulation and diagnostics for co-rotational Beris-Edwards Q-tensor hydrodynamics."""
from .errors import (BerisError, BlowUpError, ConditionViolatedError, ConfigurationError,
                     ConvergenceError, DomainError, InvalidInputError, ResolutionError,
                     SnapshotFormatError, WrongVariantError, InvalidTestFunctionError)
from .grid import SpectralGrid, leray_project
from .potentials import BM, LdG

__version__ = "0.1.0"

__all__ = [
    "BM", "LdG", "SpectralGrid", "leray_project", "__version__",
    "BerisError", "BlowUpError", "ConditionViolatedError", "ConfigurationError",
    "ConvergenceError", "DomainError", "InvalidInputError", "ResolutionError",
    "SnapshotFormatError", "WrongVariantError", "InvalidTestFunctionError",
]
