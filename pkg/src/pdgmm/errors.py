"""Exception types shared across the toolkit.

ConfigError and ValidationError map to CLI exit code 2, NumericalAbort to
exit code 3.
"""


class PdgmmError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PdgmmError, ValueError):
    """Operands have incompatible shapes."""


class TapeError(PdgmmError, RuntimeError):
    """Gradient-tape contract violation (reuse, non-scalar loss, mixed tapes)."""


class ConfigError(PdgmmError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class ValidationError(PdgmmError, ValueError):
    """Input data fails a structural or semantic precondition."""


class DegenerateColumnError(ValidationError):
    """A column has zero sample standard deviation."""


class NumericalAbort(PdgmmError, RuntimeError):
    """Training hit a non-finite loss or gradient and was stopped."""
