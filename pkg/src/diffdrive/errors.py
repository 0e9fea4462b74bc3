"""Exception types shared across the package."""


class DiffDriveError(Exception):
    """Base class for package errors."""


class DimensionError(DiffDriveError):
    """Operand shapes do not conform to the operation."""


class NumericError(DiffDriveError):
    """A computation produced NaN or Inf from finite inputs."""


class UsageError(DiffDriveError):
    """An API was called outside its contract."""


class ConfigError(DiffDriveError):
    """Invalid configuration file or option combination."""


class GenerationError(DiffDriveError):
    """Demonstration generation could not satisfy its quality filter."""


class CheckpointError(DiffDriveError):
    """Checkpoint file is malformed or inconsistent with the run."""
