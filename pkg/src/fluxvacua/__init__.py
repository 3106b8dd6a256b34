"""Flux vacua statistics: lattice sums, critical points of sections, vacuum densities."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BranchError,
    CapacityError,
    ConfigError,
    ContinuumWarning,
    ConvergenceError,
    DegenerateFitError,
    DomainError,
    EvaluationError,
    FluxVacuaError,
    InputError,
    NotCriticalError,
    SignatureError,
    ToleranceError,
)

__all__ = [
    "BranchError",
    "CapacityError",
    "ConfigError",
    "ContinuumWarning",
    "ConvergenceError",
    "DegenerateFitError",
    "DomainError",
    "EvaluationError",
    "FluxVacuaError",
    "InputError",
    "NotCriticalError",
    "SignatureError",
    "ToleranceError",
]
