"""Exception types raised across the package."""


class FFFError(Exception):
    """Base class for all package errors."""


class SingularMatrix(FFFError, ArithmeticError):
    def __init__(self, message="matrix is singular", index=None):
        super().__init__(message if index is None else f"{message} (sample {index})")
        self.index = index


class DimensionMismatch(FFFError, ValueError):
    pass


class TapeMismatch(FFFError, ValueError):
    pass


class NonFiniteLoss(FFFError, ArithmeticError):
    pass


class TrainingDiverged(FFFError, RuntimeError):
    pass


class NoStableBeta(FFFError, RuntimeError):
    pass


class ConfigError(FFFError, ValueError):
    pass


class DegenerateConfiguration(FFFError, ValueError):
    pass


class DivergentGradient(FFFError, ArithmeticError):
    pass


class NotCritical(FFFError, ValueError):
    pass


class NotSeparable(FFFError, ValueError):
    pass


class BoundViolated(FFFError, AssertionError):
    pass


class IdentityViolated(FFFError, AssertionError):
    pass
