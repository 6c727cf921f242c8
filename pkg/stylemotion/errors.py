"""Exceptions raised by stylemotion.

Every error derives from `StyleMotionError`, and most also from the builtin that
fits best, so callers can catch either.
"""

from pathlib import Path


class StyleMotionError(Exception):
    pass


class ContractError(StyleMotionError, ValueError):
    """An argument violates a size, shape or range precondition."""


class WindowRangeError(ContractError, IndexError):
    pass


class VocabularyError(ContractError):
    pass


class FormatError(StyleMotionError, ValueError):
    """A file does not follow the expected layout.

    Args:
        message: Human readable description.
        offset: Byte offset (or record index for text formats) of the problem.
        path: File that was being read, if known.
    """

    def __init__(self, message: str, offset: int, path: Path | None = None) -> None:
        location = f"{path}: " if path else ""
        super().__init__(f"{location}{message} (at offset {offset})")
        self.offset = offset
        self.path = path


class DataError(StyleMotionError, ValueError):
    pass


class NumericError(StyleMotionError, ArithmeticError):
    def __init__(self, message: str, component: str) -> None:
        super().__init__(message)
        self.component = component


class CheckpointError(StyleMotionError, ValueError):
    def __init__(self, message: str, tensor: str | None = None) -> None:
        super().__init__(message)
        self.tensor = tensor


class ConfigError(StyleMotionError, ValueError):
    pass
