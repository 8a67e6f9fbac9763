"""Exception hierarchy.

Every error raised on purpose by this package derives from AbetError so
callers (and the CLI exit-code mapping) can tell our failures apart from
genuine bugs.
"""


class AbetError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AbetError, ValueError):
    """An argument value is outside the operation's domain."""


class DimensionError(AbetError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class ContractError(AbetError):
    """A caller obligation was violated (stale trace, missing array, ...)."""


class FormatError(AbetError):
    """A file or document does not match its declared format."""


class NumericalError(AbetError, ArithmeticError):
    """A numerical procedure failed (non-SPD factorization, ...)."""


class FitError(AbetError, ValueError):
    """A scorer cannot be fitted from the data provided."""


class ConfigError(AbetError, ValueError):
    """A run configuration document is invalid."""
