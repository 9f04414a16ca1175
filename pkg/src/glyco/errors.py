"""Exception types shared across the package."""


class GlycoError(Exception):
    """Base class for all package errors."""


class DimensionError(GlycoError, ValueError):
    """Tensor or matrix shapes are incompatible."""


class ParameterError(GlycoError, ValueError):
    """An argument value is outside its allowed domain."""


class ValidationError(GlycoError, ValueError):
    """Input data failed a range or format check."""


class ConstraintError(GlycoError, ValueError):
    """A selection constraint cannot be satisfied."""


class UsageError(GlycoError, RuntimeError):
    """An API was called in an unsupported way."""


class ConfigurationError(GlycoError, ValueError):
    """A configuration is missing a required component or key."""


class NumericalError(GlycoError, FloatingPointError):
    """NaN or divergence encountered during optimisation."""


class UndefinedBaselineError(GlycoError, ValueError):
    """The No-Interp baseline has no observed points to count."""


class SplitError(GlycoError, ValueError):
    """A dataset cannot be split into train/val/test partitions."""


class ExperimentError(GlycoError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
