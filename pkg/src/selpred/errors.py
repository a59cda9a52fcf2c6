"""Exception hierarchy shared across the toolkit.

The CLI maps :class:`SelpredRuntimeError` subclasses to exit code 1 and every
other :class:`SelpredError` to exit code 2.
"""


class SelpredError(Exception):
    """Base class for all toolkit errors."""


class UsageError(SelpredError, ValueError):
    """Invalid argument or violated precondition."""


class DimensionError(UsageError):
    """Array shapes do not agree with an operation's contract."""


class InsufficientSamplesError(DimensionError):
    """Too few rows for a statistic that needs several samples."""


class ValidationError(SelpredError, ValueError):
    """Input file or config failed validation."""


class ParseError(ValidationError):
    """A text file could not be parsed; carries the 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SelpredRuntimeError(SelpredError, RuntimeError):
    """Numeric or runtime failure (exit code 1)."""


class NumericError(SelpredRuntimeError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, stage, epoch, value=float("nan")):
        self.stage = stage
        self.epoch = epoch
        self.value = value
        super().__init__(f"{stage} diverged at epoch {epoch} (loss={value})")
