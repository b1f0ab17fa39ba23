"""Exception hierarchy.

Three families map onto the CLI exit codes: UsageError -> 1,
DataError -> 2, NumericError -> 3.
"""


class SpoofkitError(Exception):
    """Base class for every error raised by this package."""


class UsageError(SpoofkitError):
    """Caller asked for something malformed (bad flags, bad config)."""

    exit_code = 1


class InvalidConfig(UsageError):
    """A configuration value or combination is not allowed."""


class InvalidMargins(InvalidConfig):
    """One-class margins must satisfy m0 > m1."""


class DataError(SpoofkitError):
    """Input data is missing, malformed, or insufficient."""

    exit_code = 2


class UnsupportedFormat(DataError):
    """Audio file exists but is not 16 kHz / 16-bit / mono PCM."""


class CorruptFile(DataError):
    """File is truncated or structurally broken."""


class VersionMismatch(DataError):
    """Serialized file was written by an incompatible format version."""


class ParseError(DataError):
    """A text input failed to parse; carries the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicatePath(DataError):
    """Manifest lists the same audio path twice."""


class TooShort(DataError):
    """Signal shorter than one analysis frame."""


class InputTooShort(DataError):
    """Feature matrix too short for the network's stride chain."""


class DimensionMismatch(DataError):
    """Operand dimensions do not line up."""


class ShapeMismatch(DimensionMismatch):
    """Parameter and gradient shapes differ."""


class EmptyResult(DataError):
    """An operation produced nothing usable (e.g. SAD removed all frames)."""


class EmptySeries(DataError):
    """Score series has no values."""


class EmptyClass(DataError):
    """A trial list (target or nontarget) is empty."""


class EmptyFeatures(DataError):
    """Feature matrix has no frames."""


class InsufficientData(DataError):
    """Not enough training material to fit a model."""


class TooFewFrames(DataError):
    """Fewer frames than mixture components."""


class MissingScores(DataError):
    """Evaluation manifest entry has no score line."""


class NumericError(SpoofkitError):
    """Computation failed for numerical reasons."""

    exit_code = 3


class ZeroPower(NumericError):
    """Signal has zero RMS where nonzero power is required."""


class ZeroVector(NumericError):
    """Vector with zero norm cannot be length-normalized."""


class SingularScatter(NumericError):
    """Scatter matrix is singular beyond what regularization handles."""


class DegenerateData(NumericError):
    """Data degenerate for the requested model (e.g. zero covariance)."""


class NonFiniteValue(NumericError):
    """NaN or infinity appeared where finite values are required."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented CLI exit code."""
    if isinstance(exc, SpoofkitError):
        for klass in (UsageError, DataError, NumericError):
            if isinstance(exc, klass):
                return klass.exit_code
    if isinstance(exc, OSError):
        return DataError.exit_code
    return 1
