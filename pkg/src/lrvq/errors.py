"""Exception types shared across the toolkit."""


class LrvqError(Exception):
    """Base class for all toolkit errors."""


class NonDivisibleError(LrvqError, ValueError):
    """Subvector size does not divide the parameter count."""


class InvalidVarianceError(LrvqError, ValueError):
    """Requested a normal draw with non-positive variance."""


class TooFewRowsError(LrvqError, ValueError):
    """Not enough samples to estimate the requested statistic."""


class NotSymmetricError(LrvqError, ValueError):
    """Matrix expected to be symmetric is not."""


class BadDimError(LrvqError, ValueError):
    """Inner dimensionality outside its valid range."""


class ShapeMismatchError(LrvqError, ValueError):
    """Operands have incompatible shapes."""


class DimMismatchError(LrvqError, ValueError):
    """Subvectors and centroids have different dimensionality."""


class IndexOutOfRangeError(LrvqError, IndexError):
    """A code refers to a centroid that does not exist."""


class AlreadyMergedError(LrvqError, ValueError):
    """Operation requires the linear transform, but it was merged away."""


class UnmergedLayerError(LrvqError, ValueError):
    """Export requires the linear transform folded into the codebook."""


class TooFewSubvectorsError(LrvqError, ValueError):
    """Centroid clamping needs at least four subvectors."""


class EmptyListError(LrvqError, ValueError):
    """Selection over an empty candidate list."""


class GridMismatchError(LrvqError, ValueError):
    """Sweep and search results cover different dimensionality grids."""


class IncompatibleRegimeError(LrvqError, ValueError):
    """Compression regime cannot be applied to the architecture."""


class UnknownArchError(LrvqError, KeyError):
    """No bundled architecture under the requested name."""


class MissingCheckpointError(LrvqError, FileNotFoundError):
    """A pipeline stage requires a checkpoint that does not exist."""


class DivergedLossError(LrvqError, ArithmeticError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"loss diverged at epoch {epoch}")


class FormatError(LrvqError, ValueError):
    """Byte stream is not a valid serialized model or checkpoint."""
