"""Exception hierarchy shared by all sgcn modules."""


class SgcnError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SgcnError):
    """Operand shapes violate an operation's contract."""


class NumericsError(SgcnError):
    """A computation produced or would produce non-finite values."""


class ConfigError(SgcnError):
    """A configuration value is out of range or inconsistent."""


class DataError(SgcnError):
    """A trajectory file or table violates the input format."""


class CheckpointError(SgcnError):
    """A checkpoint file is unreadable or inconsistent with the config."""
