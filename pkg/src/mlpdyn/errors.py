"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DataError(ValueError):
    """A dataset file or run directory is malformed or incomplete."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
