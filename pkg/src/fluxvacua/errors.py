"""Exception hierarchy shared by every module."""


class FluxVacuaError(Exception):
    """Base class for all library errors."""


class InputError(FluxVacuaError, ValueError):
    pass


class DomainError(FluxVacuaError, ValueError):
    pass


class CapacityError(FluxVacuaError):
    pass


class EvaluationError(FluxVacuaError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ToleranceError(FluxVacuaError):
    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class DegenerateFitError(FluxVacuaError):
    pass


class NotCriticalError(FluxVacuaError):
    def __init__(self, message, gradnorm=None):
        super().__init__(message)
        self.gradnorm = gradnorm


class SignatureError(FluxVacuaError):
    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class ConvergenceError(FluxVacuaError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class BranchError(FluxVacuaError):
    pass


class ConfigError(FluxVacuaError):
    """Schema violation in an experiment or object file."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class ContinuumWarning(UserWarning):
    """A section appears to have a non-isolated critical set."""
