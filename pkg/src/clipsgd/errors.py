"""Exception hierarchy.

Every exception carries a short machine-readable ``category`` string that the
command-line interface reports on failure.
"""


class ClipSGDError(Exception):
    category = "error"


class DomainError(ClipSGDError, ValueError):
    """Input outside the mathematical domain of an operation."""

    category = "domain"


class PreconditionError(ClipSGDError, ValueError):
    """A theorem's hypothesis does not hold for the supplied constants."""

    category = "precondition"


class ConfigError(ClipSGDError, ValueError):
    category = "config"


class UnsupportedMetricError(ClipSGDError, LookupError):
    category = "unsupported-metric"


class DivergedError(ClipSGDError, ArithmeticError):
    """Raised by oracles when asked to evaluate at a non-finite point."""

    category = "diverged"


class OutputError(ClipSGDError, OSError):
    category = "io"
