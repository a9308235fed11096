"""Exception types shared across the package."""


class EdgeDriveError(Exception):
    """Base class for all errors raised by edgedrive."""


class ConfigurationError(EdgeDriveError, ValueError):
    """A configuration value is invalid; the message names the offending field."""


class UsageError(EdgeDriveError, RuntimeError):
    """An operation was called in a state or with inputs it does not support."""


class ShapeError(EdgeDriveError, ValueError):
    """Array dimensions are inconsistent with the model or operation."""


class DomainError(EdgeDriveError, ValueError):
    """A numeric argument lies outside the mathematical domain of the operation."""


class DegenerateEvidenceError(EdgeDriveError, ValueError):
    """All posterior mass vanished; the Bayes update is undefined."""


class NumericalError(EdgeDriveError, ArithmeticError):
    """A linear solve hit a singular matrix or a non-finite intermediate."""


class UndefinedMetricError(EdgeDriveError, ValueError):
    """A rate or score was requested with an empty denominator."""


class MissingCellError(EdgeDriveError, ValueError):
    """A requested report cell has no episodes; the message names (mode, weather)."""
