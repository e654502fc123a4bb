"""Exception types shared across the engine."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its stated preconditions."""


class ParseError(ValueError):
    """Malformed extended-XYZ input. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Dataset content is incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during evaluation."""
