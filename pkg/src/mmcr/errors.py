"""Exception hierarchy shared by every subsystem.

Exit codes are attached to the exception classes so the CLI can map any
failure to its contract: 1 = usage error, 2 = data error, 3 = internal.
"""


class MmcrError(Exception):
    """Base class for all recoverable errors raised by this package."""

    exit_code = 2


class UsageError(MmcrError):
    """Caller passed arguments that violate an operation's precondition."""

    exit_code = 1


class DataError(MmcrError):
    """Input data (manifest, annotation file, image, pair list) is invalid."""

    exit_code = 2


class IngestError(DataError):
    """A dataset adapter could not parse its source annotations."""


class PreprocessError(DataError):
    """Geometry or image preparation failed (degenerate box, bad image)."""


class ModelFormatError(DataError):
    """A model file is corrupt, truncated, or from an unknown schema."""


class InternalError(MmcrError):
    """Invariant violated inside the package; indicates a bug, not bad input."""

    exit_code = 3
