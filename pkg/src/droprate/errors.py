"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
runtime failures (divergence, bad checkpoints, I/O) exit 2.
"""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class UsageError(ValueError):
    """Command-line invocation is malformed."""


class DimensionError(ValueError):
    """Tensor operands have incompatible shapes."""


class InvalidRateError(ValueError):
    """A dropout rate is outside [0, 1)."""


class ScheduleRangeError(ValueError):
    """An iteration index is outside the domain of a schedule."""


class ContextOverflowError(ValueError):
    """A token sequence is longer than the model's block size."""


class VocabularyError(ValueError):
    """A token id or character is not part of the vocabulary."""


class StateError(RuntimeError):
    """An operation was called before the state it depends on exists."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated, or incompatible."""


class CsvFormatError(ValueError):
    """A CSV input does not match the expected schema."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")
