"""Exception types raised across the engine."""


class VidQueryError(Exception):
    """Base class for all engine errors."""


class ZeroVectorError(VidQueryError):
    """Vector has no direction (all components zero)."""


class DimensionMismatchError(VidQueryError):
    """Operands disagree on embedding dimension."""


class OutOfRangeError(VidQueryError):
    """Scalar argument outside its documented domain."""


class EmptySequenceError(VidQueryError):
    """Frame sequence contains no frames."""


class PatchLargerThanFrameError(VidQueryError):
    """Patch size exceeds a frame dimension."""


class ProviderDimensionMismatchError(VidQueryError):
    """Embedding provider emitted outputs of inconsistent dimension."""


class InsufficientTrainingDataError(VidQueryError):
    """Fewer training vectors than requested centroids."""


class DuplicatePatchError(VidQueryError):
    """Patch identity already present in the index."""


class DuplicateKeyError(VidQueryError):
    """Metadata record already stored under this identity."""


class NotFoundError(VidQueryError):
    """No metadata record for the requested identity."""


class EmptyIndexError(VidQueryError):
    """Search requested against an index with no postings."""


class EmptyQueryError(VidQueryError):
    """Query text is empty."""


class ScorerFailureError(VidQueryError):
    """Rerank scorer failed for a candidate frame."""


class EmptyGroundTruthError(VidQueryError):
    """Evaluation requested with no ground-truth positives."""


class IndexIOError(VidQueryError):
    """Index file could not be read or written."""


class BadMagicError(IndexIOError):
    """File does not start with the index magic bytes."""


class VersionMismatchError(IndexIOError):
    """Index file format version is not supported."""


class ChecksumMismatchError(IndexIOError):
    """Index file checksum does not match its contents."""
