"""Custom exceptions for FinRay Tactile Lab."""


class FinRayError(Exception):
    """Base exception for FinRay Tactile Lab."""
    exit_code = 1


class InvalidArgumentError(FinRayError):
    """Raised when an operation receives an out-of-range argument."""
    exit_code = 2


class InvalidCalibrationError(FinRayError):
    """Raised when an unwarp calibration is singular or malformed."""
    exit_code = 2


class ShapeError(FinRayError):
    """Raised when tensor shapes are incompatible for a primitive."""
    pass


class DimensionMismatchError(FinRayError):
    """Raised when a feature vector does not match the trained dimension."""
    pass


class DegenerateDataError(FinRayError):
    """Raised when training data cannot define a model (e.g. one class)."""
    exit_code = 3


class LabelKindError(FinRayError):
    """Raised when a model head and a dataset label kind disagree."""
    exit_code = 2


class ConfigurationError(FinRayError):
    """Raised when configuration is invalid."""
    exit_code = 2


class DataError(FinRayError):
    """Raised when on-disk data is missing or unreadable."""
    exit_code = 3


class ManifestError(DataError):
    """Raised when a dataset manifest is corrupt or references missing files."""
    pass


class UnsupportedVersionError(ManifestError):
    """Raised when a manifest was written by an unknown format version."""
    pass


class CheckpointError(DataError):
    """Raised when a checkpoint file is corrupt or has the wrong layout."""
    pass


class DivergenceError(FinRayError):
    """Raised at the command layer when training diverged."""
    exit_code = 4

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
