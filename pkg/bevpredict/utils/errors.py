"""
Error types raised by bevpredict
"""

from typing import Optional


class BevPredictError(Exception):
    """Base class for every library error"""


class InvalidArgumentError(BevPredictError, ValueError):
    """An argument breaks an operation's precondition"""


class TrackFormatError(BevPredictError):
    """Track table is missing a required column or is not a table at all"""

    def __init__(self, column: Optional[str] = None, detail: Optional[str] = None):
        if column is not None:
            message = f"tracks CSV is missing required column '{column}'"
        else:
            message = f"tracks CSV cannot be read as a table: {detail}"
        super().__init__(message)
        self.column = column


class TrackParseError(BevPredictError):
    """Track table holds a cell that is not a number"""

    def __init__(self, row: int, column: str, value: str):
        super().__init__(
            f"tracks CSV row {row}: column '{column}' is not numeric ({value!r})"
        )
        self.row = row
        self.column = column


class SceneFormatError(BevPredictError):
    """Scene record file cannot be parsed"""


class SampleRangeError(BevPredictError, IndexError):
    """Not enough frames around t to build a sample"""


class ShapeError(BevPredictError, ValueError):
    """Array shapes are incompatible with the operation"""


class DegenerateWindowError(BevPredictError):
    """Probability mass under an extraction window is zero"""


class ImageFormatError(BevPredictError):
    """PGM payload cannot be decoded"""


class StackFormatError(BevPredictError):
    """Stack file cannot be decoded"""


class CheckpointError(BevPredictError):
    """Checkpoint file cannot be decoded"""


class CheckpointMagicError(CheckpointError):
    """Checkpoint does not start with the expected magic bytes"""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version"""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ends before all declared data was read"""


class CheckpointTrailingDataError(CheckpointError):
    """Checkpoint has bytes after the last declared tensor"""
