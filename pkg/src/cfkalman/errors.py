"""Exception types shared across the package."""


class CfKalmanError(Exception):
    """Base class for all package errors."""


class NumericalError(CfKalmanError):
    """A numerical routine could not produce a trustworthy result."""


class NotSPD(NumericalError):
    def __init__(self, min_pivot, message=None):
        self.min_pivot = float(min_pivot)
        super().__init__(message or f"matrix is not positive definite (min pivot {self.min_pivot:.3e})")


class SingularSystem(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, iterations, residual):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(f"no convergence after {self.iterations} iterations (residual {self.residual:.3e})")


class Overflow(NumericalError):
    pass


class InvalidStep(CfKalmanError, ValueError):
    pass


class ScheduleOffGrid(CfKalmanError, ValueError):
    pass


class GridMismatch(CfKalmanError, ValueError):
    pass


class TooFewSamples(CfKalmanError, ValueError):
    pass


class ParseError(CfKalmanError):
    def __init__(self, line, message):
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(CfKalmanError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
