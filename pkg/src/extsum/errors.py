"""Exception types shared across the package."""


class ExtSumError(Exception):
    """Base class for all extsum errors."""


class ValidationError(ExtSumError):
    """Input violates a documented precondition or data invariant."""


class ParseError(ExtSumError):
    """A file could not be parsed (malformed JSONL, missing fields, ...)."""


class ConfigError(ExtSumError):
    """A configuration value is out of its allowed range."""


class ShapeError(ExtSumError):
    """Array dimensions are inconsistent with the operation."""


class DegenerateDocumentError(ValidationError):
    """Encoding dropped every sentence of a document."""


class ContextLengthError(ValidationError):
    """Token sequence exceeds the configured runtime context length."""


class DegenerateSpanError(ValidationError):
    """A sentence span is empty and cannot be mean-pooled."""


class EnumerationGuardError(ValidationError):
    """Document too large for exhaustive subset enumeration."""


class CheckpointError(ExtSumError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or a truncated/corrupt container."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointShapeError(CheckpointError):
    """Tensor manifest disagrees with the expected shapes."""
