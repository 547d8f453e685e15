"""Exception types raised across the package."""


class DozerError(Exception):
    """Base class for package errors."""


class DimensionError(DozerError, ValueError):
    """Operand shapes are incompatible."""


class InvalidMaskError(DozerError, ValueError):
    """An attention mask has a row with no allowed key, or is otherwise unusable."""


class ParameterError(DozerError, ValueError):
    """A hyperparameter violates its documented range."""


class ConfigError(DozerError, ValueError):
    """A model configuration or parameter set is inconsistent."""


class ContractError(DozerError, RuntimeError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class DataFormatError(DozerError, ValueError):
    """An input file could not be parsed."""


class TrainingDivergedError(DozerError, RuntimeError):
    """Loss or gradients became non-finite during optimisation."""

    def __init__(self, message, last_finite_params=None):
        super().__init__(message)
        self.last_finite_params = last_finite_params
