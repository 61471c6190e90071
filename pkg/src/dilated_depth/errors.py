"""Exception hierarchy shared by every module."""


class DepthError(Exception):
    """Base class for all package errors."""


class ShapeError(DepthError, ValueError):
    """Operand shapes do not compose."""


class SizeError(DepthError, ValueError):
    """A requested dimension is zero, negative or too large."""


class ConfigError(DepthError, ValueError):
    """A layer, network or experiment configuration is invalid."""


class DomainError(DepthError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class FormatError(DepthError, ValueError):
    """A file does not follow the expected on-disk format."""


class ParseError(FormatError):
    """A text record could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(DepthError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class DigestError(ConfigError):
    """A stored digest does not match the configuration or dataset it guards."""
