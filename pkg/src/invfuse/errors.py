"""Exception and warning types raised across the package."""


class InvfuseError(Exception):
    """Base class for all package errors."""


class ShapeError(InvfuseError, ValueError):
    """Tensor channel count or layout does not match the module."""


class SizeError(InvfuseError, ValueError):
    """Image is too small for the requested computation."""


class PairDimensionError(InvfuseError, ValueError):
    """The two images of a pair have different dimensions."""


class DecodeError(InvfuseError, OSError):
    """An image file could not be read or decoded."""


class CropSizeError(InvfuseError, ValueError):
    """Crop augmentation received an image that is not 256x256."""


class ConfigError(InvfuseError, ValueError):
    """Invalid model, training or ablation configuration."""


class NumericsError(InvfuseError, ArithmeticError):
    """A non-finite loss or gradient was produced during training."""


class CheckpointVersionError(InvfuseError, ValueError):
    """Checkpoint file is corrupted or written by an unknown version."""


class DegenerateSampleWarning(UserWarning):
    """All adaptive loss weights are zero for a sample (flat sources)."""
