"""Exception types shared across the codec, store, and lab."""


class LccError(Exception):
    """Base class for all package errors."""


class ShapeError(LccError):
    """Operands disagree on length or layout."""


class DomainError(LccError):
    """Input outside an operation's domain (NaN/Inf, empty, bad parameter)."""


class EncodingError(LccError):
    """A symbol is not covered by the active code table."""


class CorruptionError(LccError):
    """Serialized data failed validation (magic, version, checksum, framing)."""


class ChainError(LccError):
    """The checkpoint chain is incomplete or inconsistent for the request."""


class StorageError(LccError):
    """Underlying I/O failed; the chain keeps its previous committed state."""


class PipelineError(LccError):
    """The asynchronous encode pipeline failed or was misused."""
