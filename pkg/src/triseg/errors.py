"""Exception hierarchy shared across the package.

Every error the CLI can surface maps to one class here so scripts can
dispatch on the reported type without parsing prose.
"""


class TrisegError(Exception):
    """Base class; `code` is the process exit code the CLI uses."""

    code = 1


class ShapeError(TrisegError, ValueError):
    """Tensor dimensions incompatible with the requested operation."""

    code = 2


class ParameterError(TrisegError, ValueError):
    """An argument is outside its documented domain."""

    code = 2


class DataError(TrisegError, ValueError):
    """Input data violates a contract (labels out of range, NaN, no valid pixels)."""

    code = 3


class ConfigError(TrisegError, ValueError):
    """Malformed or inconsistent run configuration."""

    code = 4


class MissingInputError(TrisegError, FileNotFoundError):
    """A required file or directory does not exist."""

    code = 5


class CheckpointError(TrisegError, ValueError):
    """Checkpoint bytes are corrupt or of an unsupported format version."""

    code = 6
