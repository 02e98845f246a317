"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`BqprocError` and carries
an ``exit_code`` so the command line tool can map failures to its exit
convention (1 = input/validation problem, 2 = numeric/runtime problem).
"""


class BqprocError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(BqprocError):
    """Invalid configuration value or malformed input file."""

    exit_code = 1


class DomainError(BqprocError):
    """Arguments outside the mathematical domain of an operation."""

    exit_code = 1


class NumericError(BqprocError):
    """Quadrature or finite-difference machinery failed to converge."""

    exit_code = 2


class DegenerateResponse(BqprocError):
    """All observed responses identical; the score carries no information."""

    exit_code = 2


class EstimationError(BqprocError):
    """No optimizer start converged."""

    exit_code = 2


class NoCrossing(BqprocError):
    """The margin does not change sign over the unit interval."""

    exit_code = 1


class IllConditionedCrossing(BqprocError):
    """Margin slope at the crossing too close to zero for a usable variance."""

    exit_code = 2


class PreconditionNotMet(BqprocError):
    """Linearization bound preconditions fail for the supplied inputs."""

    exit_code = 1


class MonteCarloError(BqprocError):
    """Replication failure rate above the acceptable threshold."""

    exit_code = 2
