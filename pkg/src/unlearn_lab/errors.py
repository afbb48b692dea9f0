"""Exception types shared across the package."""


class UnlearnLabError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(UnlearnLabError, ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class DomainError(UnlearnLabError, ValueError):
    """An input value (token id, shape) is outside the model's domain."""


class NumericError(UnlearnLabError, ArithmeticError):
    """A non-finite value appeared where finite arithmetic was required."""


class BatchPairingError(UnlearnLabError, ValueError):
    """A paired-batch loss received misaligned forget/reference examples."""


class EnumerationSizeError(UnlearnLabError, ValueError):
    """An exact-enumeration request exceeds the tractable instance size."""


class EmptyInputError(UnlearnLabError, ValueError):
    """A metric was asked to aggregate over an empty input set."""


class CheckpointError(UnlearnLabError, ValueError):
    """A checkpoint file is malformed or does not match the expected layout."""


class WorldInvariantError(UnlearnLabError, ValueError):
    """A generated or deserialized world violates a structural invariant."""


class ReferenceQualityError(UnlearnLabError, RuntimeError):
    """The frozen model leaks private tokens in too many reference samples."""
