"""Exception types shared across the toolkit."""


class UnitDsrError(Exception):
    """Base class for all toolkit errors."""


# --- waveform / DSP ---

class AllSilentError(UnitDsrError):
    """No analysis window exceeded the trimming threshold."""


class DomainError(UnitDsrError):
    """Parameter outside its allowed range."""


class ZeroSignalError(UnitDsrError):
    """Operation requires a signal with nonzero RMS."""


class TooShortError(UnitDsrError):
    """Input too short for the requested analysis."""


class FeatureFileError(UnitDsrError):
    """External feature file missing or malformed."""


class StereoInputError(UnitDsrError):
    """Only mono audio is accepted."""


# --- unit codec ---

class InsufficientDataError(UnitDsrError):
    """Fewer data points than clusters requested."""


class DimensionMismatchError(UnitDsrError):
    """Feature dimension does not match the codebook."""


class EmptySequenceError(UnitDsrError):
    """Operation requires a non-empty sequence."""


class EmptyReferenceError(UnitDsrError):
    """Error-rate reference must be non-empty."""


class UnitRangeError(UnitDsrError):
    """Unit id outside [0, K-1]."""


# --- normalizer / text-to-unit ---

class InfeasibleTargetError(UnitDsrError):
    """CTC target cannot be aligned within the available frames."""


class EmptyDatasetError(UnitDsrError):
    """Training requires at least one example."""


class SpeakerFilterViolation(UnitDsrError):
    """A training pair violates the stage's speaker roles."""


class EmptyTextError(UnitDsrError):
    """Text input empty after normalization."""


# --- vocoder ---

class LengthMismatchError(UnitDsrError):
    """Paired sequences must have equal length."""


class UnknownSpeakerError(UnitDsrError):
    """Speaker id not present in the speaker table."""


# --- evaluation ---

class DivisionDomainError(UnitDsrError):
    """Relative reduction undefined for a zero baseline."""


class EmptyCollectionError(UnitDsrError):
    """Aggregation requires at least one record."""


class IoError(UnitDsrError):
    """Report or artifact file could not be written."""


# --- manifests / config / checkpoints ---

class FieldCountError(UnitDsrError):
    """Manifest line has the wrong number of fields."""


class DuplicateIdError(UnitDsrError):
    """Utterance id repeated within one manifest."""


class UnknownConfigKeyError(UnitDsrError):
    """Config file contains a key outside the schema."""


class MissingPrerequisiteError(UnitDsrError):
    """A pipeline stage's required artifact is absent."""


class ConfigMismatchError(UnitDsrError):
    """Checkpoint was produced under an incompatible configuration."""


class VersionError(UnitDsrError):
    """Checkpoint format version not supported."""


class CorruptFileError(UnitDsrError):
    """Checkpoint payload failed its integrity check."""
