"""Exception types shared across the package."""


class PathrexError(Exception):
    """Base class for all errors raised by pathrex."""


class DimensionError(PathrexError, ValueError):
    pass


class DivergenceError(PathrexError, FloatingPointError):
    """Raised when training produces a non-finite value."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ParseError(PathrexError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GenerationError(PathrexError, RuntimeError):
    pass


class CheckpointFormatError(PathrexError, ValueError):
    pass


class CheckpointCorruptError(CheckpointFormatError):
    pass


class ConfigError(PathrexError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
