"""Exception hierarchy shared by all stages."""


class TeakError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(TeakError, ValueError):
    """Malformed input file or configuration document."""


class DomainError(TeakError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateFluxError(TeakError, ValueError):
    """Flux lacks the structure an operation relies on (no interior peak, zero area, ...)."""


class NumericalError(TeakError, RuntimeError):
    """Iterative method failed to converge or an accuracy check failed."""


class RankDeficiencyError(NumericalError):
    """Design matrix of a regression is not of full column rank."""


class InfeasibleError(TeakError, RuntimeError):
    """No calibration coefficient satisfies the constraints within tolerance."""
