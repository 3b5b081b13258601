"""Exception hierarchy shared by the library and the command line."""


class DeepMFError(Exception):
    """Base class for every error raised by deepmf."""


class DimensionError(DeepMFError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(DeepMFError, ValueError):
    """An argument lies outside the domain of the operation."""


class UsageError(DeepMFError, ValueError):
    """An operation was called with an inconsistent configuration."""


class NumericalError(DeepMFError, ArithmeticError):
    """A factorization failed or a non-finite value appeared."""
