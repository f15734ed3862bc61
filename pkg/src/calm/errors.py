"""Exception hierarchy shared by every pipeline stage."""


class CalmError(Exception):
    """Base class for all errors raised by the toolkit."""


class ParseError(CalmError):
    """A file could not be parsed (bad header, malformed row)."""


class ValidationError(CalmError):
    """A parsed value falls outside its allowed domain."""


class DataError(CalmError):
    """Recorded data violates a structural requirement (ordering, emptiness)."""


class DegenerateSignalError(CalmError):
    """A signal is too short or too empty for the requested operation."""


class DesignError(CalmError):
    """Filter design parameters are invalid."""


class DetectionError(CalmError):
    """R-peak detection found too few beats."""


class AssemblyError(CalmError):
    """Feature assembly produced no usable rows."""


class ScenarioError(CalmError):
    """A train/test scenario filter left one side empty."""


class ContractError(CalmError):
    """Inputs do not match the schema a trained model expects."""


class TrainingError(CalmError):
    """Model training diverged."""


class IncompatibleFormatError(CalmError):
    """A model file was written by an unsupported format version."""


class CorruptModelError(CalmError):
    """A model file failed its integrity check."""


class ConfigError(CalmError):
    """A run configuration is invalid (unknown key, wrong type)."""
