"""Exception types shared across the package."""


class ProtochangeError(Exception):
    """Base class for every error raised by this package."""


class MissingFile(ProtochangeError):
    """A required input file does not exist."""


class UnsupportedFormat(ProtochangeError):
    """Input file is not an 8/16-bit PNG or GeoTIFF."""


class CorruptData(ProtochangeError):
    """Input file exists but cannot be decoded."""


class DimensionMismatch(ProtochangeError):
    """Two rasters that must share a shape do not."""


class EmptyDataset(ProtochangeError):
    """Dataset root holds no usable samples."""


class UnmatchedFile(ProtochangeError):
    """Dataset filename present on one side of the pair only."""


class NotMultiple(ProtochangeError):
    """Image dimension is not a multiple of the patch size."""


class ModelLoadFailure(ProtochangeError):
    """Neural backend model file missing or unloadable."""


class ShapeMismatch(ProtochangeError):
    """Array shapes violate an operation's contract."""


class EmptyMask(ProtochangeError):
    """Binary mask selects no pixels."""


class OutOfBounds(ProtochangeError):
    """Placement falls outside the scene."""


class NoSegments(ProtochangeError):
    """Segment map holds no segments."""


class InvalidComponentCount(ProtochangeError):
    """Requested component count outside [1, min(n, d)]."""


class DegenerateData(ProtochangeError):
    """Data has zero total variance."""


class TooFewPoints(ProtochangeError):
    """Fewer samples than clusters."""


class EmptyPrototypeCells(ProtochangeError):
    """Prototype covers no grid cell at the requested coverage."""


class ConstantScores(ProtochangeError):
    """Score map has no variance to threshold."""


class TooSmallImage(ProtochangeError):
    """Image smaller than the processing block."""


class SingularCovariance(ProtochangeError):
    """Covariance not positive definite even after ridge regularization."""


class EmptyMatrix(ProtochangeError):
    """Confusion matrix with zero total count."""


class PipelineStageError(ProtochangeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}': {cause}")
