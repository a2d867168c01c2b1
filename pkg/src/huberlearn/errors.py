"""Exception hierarchy shared by every module."""


class HuberLearnError(Exception):
    """Base class for library errors."""


class InvalidInputError(HuberLearnError, ValueError):
    """An argument is non-finite, out of range, or otherwise malformed."""


class EmptyDatasetError(InvalidInputError):
    pass


class OutOfDomainError(InvalidInputError):
    pass


class PreconditionError(HuberLearnError):
    """A theory-facing hypothesis (e.g. sigma > max{2M, 1}) does not hold."""


class NumericalError(HuberLearnError, ArithmeticError):
    """Quadrature, bracketing or linear algebra failed to deliver a result."""
