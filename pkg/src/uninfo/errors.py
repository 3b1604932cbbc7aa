"""Exception types raised by the public API.

Every contract violation maps to a named exception so callers can
distinguish bad inputs from numerical trouble.
"""


class UninfoError(Exception):
    """Base class for all package errors."""


class ZeroVectorRow(UninfoError):
    """A row that should be normalizable has (near-)zero norm."""


class DimensionMismatch(UninfoError):
    """Embedding and prototype dimensions disagree."""


class LengthMismatch(UninfoError):
    """Two sequences that must align have different lengths."""


class ShapeMismatch(UninfoError):
    """Tensor shapes are incompatible for the requested operation."""


class BatchTooSmall(UninfoError):
    """The operation needs at least two samples per batch."""


class RankTooLarge(UninfoError):
    """Requested low-rank factor rank is not smaller than the layer width."""


class BadImageShape(UninfoError):
    """Image tensor does not match the encoder's expected geometry."""


class UnknownKind(UninfoError):
    """Unrecognized corruption kind."""


class EmptyKinds(UninfoError):
    """A corruption suite was requested with no kinds."""


class EmptySet(UninfoError):
    """A point set that must be nonempty is empty."""


class EmptyStream(UninfoError):
    """An adaptation stream yielded no usable batches."""


class DegenerateSpectrum(UninfoError):
    """The projection plane is undefined because the spectrum collapsed."""


class ZeroMeanVector(UninfoError):
    """Prompt embeddings of a class cancel to a zero mean vector."""


class TooManyClasses(UninfoError):
    """More orthonormal prototypes requested than the dimension allows."""


class NumericFailure(UninfoError):
    """A loss or parameter became non-finite during adaptation."""


class ConfigError(UninfoError):
    """Experiment configuration is malformed or inconsistent."""


class IoError(UninfoError):
    """A referenced path is missing or unreadable."""


class ParseError(UninfoError):
    """An input file failed to parse; message carries the line number."""
