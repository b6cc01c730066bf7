"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array shapes disagree with what an operation requires."""


class ContextError(RuntimeError):
    """A forward context was reused or paired with the wrong backward call."""


class DatasetError(Exception):
    """Raised when on-disk EEG data is missing or malformed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)


class CheckpointError(ValueError):
    """Checkpoint file is unreadable, truncated or inconsistent."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(ValueError):
    """Run configuration failed validation."""
