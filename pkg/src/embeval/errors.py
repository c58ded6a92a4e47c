"""Shared exception types."""


class EmbevalError(Exception):
    """Base class for all toolkit errors."""


class EmptyCorpusError(EmbevalError):
    """Raised when preprocessing leaves zero tokens."""


class ConfigError(EmbevalError):
    """Raised for invalid training or run configuration."""


class FormatError(EmbevalError):
    """Raised for malformed input files; message carries the position."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
