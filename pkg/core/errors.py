class PsLabError(Exception):
    """Base class for every error raised by the lab."""

    exit_code = 1


class DomainError(PsLabError, ValueError):
    """An input lies outside the domain of the operation (e.g. a point off the ball)."""


class ConfigError(PsLabError):
    """A group, gauge or run configuration is invalid."""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(PsLabError):
    """Too few samples, orbit points or traces to produce an estimate."""

    exit_code = 3


class UndecidedError(PsLabError):
    """A verdict could not be decided within the representable basis."""

    exit_code = 4


class InvariantViolation(PsLabError):
    """A structural invariant (e.g. disjoint horoballs) does not hold."""


class DegenerateMeasureError(PsLabError):
    """Every atom weight underflowed."""


class DegenerateRankError(DomainError):
    """A cusp rank equals the Poincaré exponent where that is not allowed."""


class NumericError(PsLabError):
    """A numeric routine (inversion, quadrature) failed."""
