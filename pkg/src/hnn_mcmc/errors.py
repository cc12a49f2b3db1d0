"""Exception types shared across the package."""


class HnnMcmcError(Exception):
    """Base class for all package errors."""


class NumericalDomainError(HnnMcmcError, ValueError):
    """A density or gradient evaluated to a non-finite value."""


class DatasetError(HnnMcmcError, ValueError):
    """A dataset file could not be parsed or normalized."""


class IntegrationError(HnnMcmcError, ArithmeticError):
    """Leapfrog integration produced a non-finite gradient."""

    def __init__(self, message, position=None, step=None):
        super().__init__(message)
        self.position = position
        self.step = step


class TrainingError(HnnMcmcError, ArithmeticError):
    """Network training diverged."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DiagnosticError(HnnMcmcError, ValueError):
    """A diagnostic cannot be computed from the supplied samples."""


class ConfigError(HnnMcmcError, ValueError):
    """A run configuration is invalid; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
