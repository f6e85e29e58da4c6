"""Exception types shared across the package.

The CLI maps these onto exit codes: data/format problems exit 2,
config/shape problems exit 3, numeric failures exit 1.
"""


class SpecmatchError(Exception):
    pass


class DimensionError(SpecmatchError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyInputError(SpecmatchError):
    """An operation that requires at least one element got none."""


class NumericError(SpecmatchError):
    """A non-finite value appeared where a finite one is required."""


class DataFormatError(SpecmatchError):
    """A file does not parse under its declared format."""


class SchemaError(DataFormatError):
    """A parsed record is missing or mistypes a required field."""


class InsufficientDataError(SpecmatchError):
    """Not enough records to perform the operation (e.g. sampling, splitting)."""


class ReferentialIntegrityError(SpecmatchError):
    """A record references an entity that does not exist."""


class ConfigError(SpecmatchError):
    """Invalid or inconsistent configuration values."""


class CheckpointVersionError(SpecmatchError):
    """Checkpoint file was written under an unsupported format version."""


class CheckpointCorruptionError(SpecmatchError):
    """Checkpoint file is truncated or internally inconsistent."""


class TransferError(SpecmatchError):
    """Parameters cannot be transferred between incompatible models."""
