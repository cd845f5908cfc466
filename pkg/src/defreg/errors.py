"""Exception types shared across the package."""


class DomainError(ValueError):
    """Invalid data passed to an operation (bad coordinates, mismatched shapes, bad labels)."""


class ConfigurationError(ValueError):
    """Inconsistent or unusable configuration (grid too small, bad geometry, bad weights)."""


class NumericalError(ArithmeticError):
    """Optimization produced a non-finite value; carries diagnostic context."""

    def __init__(self, message, *, level=None, iteration=None, weights=None):
        super().__init__(message)
        self.level = level
        self.iteration = iteration
        self.weights = weights
