"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 2 for configuration
problems, 3 for data problems, 4 for numerical aborts.
"""


class L2GError(Exception):
    exit_code = 1


class ConfigError(L2GError):
    exit_code = 2


class ParameterError(ConfigError, ValueError):
    pass


class DataError(L2GError):
    exit_code = 3


class DimensionError(DataError, ValueError):
    pass


class ArchitectureError(DimensionError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class SplitError(DataError):
    pass


class SamplerError(DataError):
    pass


class SamplerContractViolation(SamplerError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(L2GError):
    exit_code = 4


class NormalizationError(NumericalError, ValueError):
    pass


class GradientError(NumericalError):
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"non-finite gradient for parameter {name!r}")


class BatchTooSmall(NumericalError, ValueError):
    pass


class NoClustersError(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, message, indices=()):
        self.indices = list(indices)
        super().__init__(f"{message}; batch indices: {self.indices}")
