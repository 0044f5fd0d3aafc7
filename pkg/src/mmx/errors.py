"""Exception hierarchy shared across the package."""


class MmxError(Exception):
    """Base class for all package errors."""


class InvalidGameError(MmxError, ValueError):
    pass


class InvalidParameterError(MmxError, ValueError):
    pass


class InvalidInputError(MmxError, ValueError):
    pass


class InvalidStateError(MmxError, ValueError):
    """Raised when a dynamics state violates a stepper precondition."""


class NumericalFailure(MmxError, ArithmeticError):
    pass


class SolverFailure(MmxError, RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class EigensolverFailure(MmxError, RuntimeError):
    pass


class InvalidEquilibriumError(MmxError, ValueError):
    pass


class ConfigError(MmxError, ValueError):
    pass


class MissingMetricError(MmxError, KeyError):
    pass
