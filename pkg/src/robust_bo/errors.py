"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, ...)."""


class InsufficientData(ValueError):
    """Too few (inlier) observations to fit a model."""


class NumericalFailure(ArithmeticError):
    """A factorization failed even after jitter escalation."""
