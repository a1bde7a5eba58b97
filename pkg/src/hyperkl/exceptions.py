"""Exception hierarchy shared by all modules."""


class HyperKLError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigurationError(HyperKLError, ValueError):
    exit_code = 2


class InvalidHyperParameterError(ConfigurationError):
    pass


class DimensionError(HyperKLError, ValueError):
    exit_code = 2


class NumericError(HyperKLError, ArithmeticError):
    exit_code = 3


class DegenerateModeError(NumericError):
    pass


class SingularCovarianceError(NumericError):
    pass


class UnderSampledError(NumericError):
    pass


class DegenerateSampleError(NumericError):
    pass


class SupportViolationError(NumericError):
    pass


class InitializationError(NumericError):
    pass


class InverseCrimeError(ConfigurationError):
    pass


class StaleArtifactError(HyperKLError):
    exit_code = 4


class CapacityError(HyperKLError, OverflowError):
    exit_code = 3
