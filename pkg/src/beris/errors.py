"""Exception hierarchy shared by all subpackages."""


class BerisError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(BerisError, ValueError):
    """An argument violates a documented precondition (non-finite, asymmetric, ...)."""


class DomainError(BerisError, ValueError):
    """A Q-tensor lies outside (or too close to the boundary of) the physical domain."""


class ConvergenceError(BerisError, RuntimeError):
    """An inner Newton solve did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConditionViolatedError(BerisError, ValueError):
    """A closed-form formula was requested outside its range of validity."""


class WrongVariantError(BerisError, TypeError):
    """An operation was called with the wrong bulk-potential variant."""


class ConfigurationError(BerisError, ValueError):
    """Invalid configuration (run config, history depth, mollifier width, ...)."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ResolutionError(BerisError, ValueError):
    """A parabolic cylinder is not resolved by the grid or the stored time slices."""

    def __init__(self, message, smallest_radius=None):
        super().__init__(message)
        self.smallest_radius = smallest_radius


class BlowUpError(BerisError, RuntimeError):
    """The time integration produced NaN or an unbounded velocity."""

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class SnapshotFormatError(BerisError, ValueError):
    """A snapshot file is corrupt or has an unexpected header."""

    def __init__(self, message, path=None, field=None):
        super().__init__(message)
        self.path = path
        self.field = field


class InvalidTestFunctionError(InvalidInputError):
    """A localisation function is not admissible for the trajectory it is applied to."""
