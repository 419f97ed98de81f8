"""Exception taxonomy shared across the package.

Three coarse classes so the command line can map failures to exit codes:
configuration/usage problems, malformed or inconsistent data, and numeric
breakdowns (conditioning, non-finite values).
"""


class CgpdsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CgpdsError):
    """Invalid shapes, flags, or model configuration (usage-level mistakes)."""


class DataError(CgpdsError):
    """Malformed input files or data violating documented preconditions."""


class NumericalError(CgpdsError):
    """Numeric failure: non-finite values where finite ones are required."""


class ConditioningError(NumericalError):
    """Cholesky factorization failed even after jitter escalation.

    The message names the kernel whose Gram matrix broke so the failure is
    actionable from the command line.
    """
