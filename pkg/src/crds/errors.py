"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: argument/config/state problems exit 1,
file format and missing-stage problems exit 2, numeric problems exit 3.
"""


class CRDSError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CRDSError):
    """An operation was called with arguments violating its contract."""


class ConfigError(InvalidArgumentError):
    """A pipeline configuration file or override failed validation."""


class StateError(CRDSError):
    """A required in-process artifact (bank, transformer) is missing."""


class FormatError(CRDSError):
    """A binary file failed structural validation (magic, dtype, fields)."""


class VersionError(FormatError):
    """A file declares a format version newer than this reader supports."""


class LengthError(FormatError):
    """Declared sizes disagree with the actual payload byte length."""


class CoverageError(FormatError):
    """A shard set has duplicate, missing, or inconsistent index ranges."""


class StageInputError(CRDSError):
    """A pipeline stage's input artifact is missing from the work directory."""


class NumericError(CRDSError):
    """Non-finite values where finite ones are required."""
