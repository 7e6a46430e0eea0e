"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition."""


class NumericFault(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class CapacityError(MemoryError):
    """The requested exhaustive computation exceeds the state budget."""


class ModelParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelDomainError(ValueError):
    """A potential table holds a value outside the domain of log."""


class QueryError(KeyError):
    """A marginal query is not covered by any region."""
