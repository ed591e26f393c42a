"""Exception hierarchy shared by every ganaug module."""


class GanAugError(Exception):
    """Base class for all errors raised by ganaug."""


class ShapeError(GanAugError, ValueError):
    pass


class InvalidShape(ShapeError):
    pass


class IncompatibleShapes(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class AxisOutOfRange(ShapeError):
    pass


class ChannelMismatch(ShapeError):
    pass


class OutputTooSmall(ShapeError):
    pass


class DimensionMismatch(ShapeError):
    pass


class NonScalarLoss(GanAugError, ValueError):
    pass


class DetachedTensor(GanAugError, ValueError):
    pass


class SingleElementBatch(GanAugError, ValueError):
    pass


class LabelOutOfRange(GanAugError, ValueError):
    pass


class NonFiniteGradient(GanAugError, FloatingPointError):
    pass


class NonFiniteLoss(GanAugError, FloatingPointError):
    """Training produced a NaN/Inf loss. ``record`` holds the offending step."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class InvalidConfig(GanAugError, ValueError):
    pass


class IndivisibleInputSize(InvalidConfig):
    pass


class DataError(GanAugError):
    """Base for dataset and file problems (CLI exit code 3)."""


class EmptyDataset(DataError, ValueError):
    pass


class EmptyClass(DataError, ValueError):
    pass


class MissingClassDir(DataError, FileNotFoundError):
    pass


class NoImages(DataError, ValueError):
    pass


class UndecodableImage(DataError, ValueError):
    pass


class UnsupportedFormat(UndecodableImage):
    pass


class CorruptFile(UndecodableImage):
    pass


class CheckpointError(GanAugError, ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


class DegenerateClass(GanAugError, ValueError):
    pass
