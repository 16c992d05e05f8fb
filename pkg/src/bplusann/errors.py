"""Exception hierarchy shared across the library and mapped to CLI exit codes."""


class BPlusAnnError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class UsageError(BPlusAnnError):
    """Caller violated a precondition (bad argument, wrong dimension, k too large)."""

    exit_code = 2


class DomainError(BPlusAnnError):
    """Input is outside the metric's domain (e.g. zero vector under cosine)."""

    exit_code = 2


class FormatError(BPlusAnnError):
    """A file does not conform to its declared binary format."""

    exit_code = 3


class IntegrityError(BPlusAnnError):
    """Internal structure is inconsistent (corrupt index, id mismatch, bad checksum)."""

    exit_code = 4


class StorageError(BPlusAnnError):
    """An I/O operation against the page file failed."""

    exit_code = 5
