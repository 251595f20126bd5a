"""Exception hierarchy.

``ValidationError`` subclasses signal bad arguments or inputs that violate a
precondition (CLI exit code 1).  ``FormatError`` subclasses signal unreadable
or malformed files (CLI exit code 2).
"""


class PulmofuseError(Exception):
    """Base class for all library errors."""


class ValidationError(PulmofuseError, ValueError):
    pass


class FormatError(PulmofuseError):
    pass


# nifti_io
class BadMagic(FormatError):
    pass


class PairFormUnsupported(FormatError):
    pass


class Nifti2Unsupported(FormatError):
    pass


class InvalidHeader(FormatError):
    pass


class UnsupportedDatatype(FormatError):
    pass


class UnsupportedDimensions(FormatError):
    pass


class TruncatedData(FormatError):
    pass


class GzipCorrupt(FormatError):
    pass


class InconsistentHeader(ValidationError):
    pass


class InvalidLabels(ValidationError):
    pass


# volume_ops
class DegenerateRange(ValidationError):
    pass


class AllUninformative(ValidationError):
    pass


class SpecOutOfRange(ValidationError):
    pass


class EmptyVolume(ValidationError):
    pass


# patching
class PatchLargerThanVolume(ValidationError):
    pass


class InvalidStride(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


class MissingPatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


# ensemble
class EmptyScores(ValidationError):
    pass


class NonPositiveScore(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


# morphology
class EmptyMask(ValidationError):
    pass


class NotSingleComponent(ValidationError):
    pass


class EmptySkeleton(ValidationError):
    pass


# metrics
class RegionNotPartition(ValidationError):
    pass


class WeightOutOfRange(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


# synth
class TubeOutOfBounds(ValidationError):
    pass


# cli
class UnknownSubcommand(ValidationError):
    pass
