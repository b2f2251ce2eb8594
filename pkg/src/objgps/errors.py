"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a shape, range or consistency requirement."""


class ParseError(InvalidInputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A matrix that must be positive definite is not, even after jitter."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, last_finite_loss):
        super().__init__(f"{message} (last finite loss {last_finite_loss:.6g})")
        self.last_finite_loss = last_finite_loss
