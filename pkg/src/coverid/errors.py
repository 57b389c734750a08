"""Exception hierarchy shared across the toolkit.

Exceptions are grouped under four bases that map onto CLI exit codes:
config problems (2), missing pipeline artifacts (3), bad or degenerate
data (4), and training divergence (5). Anything else is a plain bug and
escapes as-is.
"""


class CoverIdError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(CoverIdError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class MissingArtifactError(CoverIdError):
    """A pipeline stage output required by a later stage is absent."""

    exit_code = 3


class DataError(CoverIdError):
    """Invalid, degenerate, or undecodable input data."""

    exit_code = 4


class DivergenceError(CoverIdError):
    """Training produced a non-finite loss."""

    exit_code = 5


# audio / features
class DecodeError(DataError):
    pass


class EmptyAudioError(DataError):
    pass


class TooShortError(DataError):
    pass


class SilentSignalError(DataError):
    pass


class RatioOutOfRangeError(DataError):
    pass


# tensor core
class ShapeMismatchError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


class FullyMaskedRowError(DataError):
    pass


class MissingGradError(CoverIdError):
    pass


# losses
class LabelOutOfRangeError(DataError):
    pass


class UnknownClassError(DataError):
    pass


class EmptySequenceError(DataError):
    pass


# alignment
class NoPairsError(DataError):
    pass


class EmptyInputError(DataError):
    pass


# retrieval
class DimensionMismatchError(DataError):
    pass


class EmptyIndexError(DataError):
    pass


class ZeroVectorError(DataError):
    pass


# evaluation
class NoRelevantError(DataError):
    pass


class MissingGroundTruthError(DataError):
    pass


# training
class EmptyCorpusError(DataError):
    pass


class EmptyAlignmentTableError(DataError):
    pass
