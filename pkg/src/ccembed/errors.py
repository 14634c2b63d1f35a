"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigurationError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class CCEmbedError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CCEmbedError):
    """Invalid configuration, parameters out of range, or bad usage."""


class GeometryError(CCEmbedError):
    """Degenerate or inconsistent geometric input."""


class DataError(CCEmbedError):
    """Malformed, mismatched, or missing data."""


class ParseError(DataError):
    """A file could not be parsed; message carries the line number."""


class ModelError(DataError):
    """A generative model is inconsistent with what was asked of it."""


class NumericalError(CCEmbedError):
    """A numerical routine failed or produced non-finite values."""
