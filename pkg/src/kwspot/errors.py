"""Exception types shared across the package."""


class KwspotError(Exception):
    """Base class for all errors raised by kwspot."""


class ParameterError(KwspotError):
    """An argument violates a documented precondition."""


class DecodeError(KwspotError):
    """Audio input could not be read or is empty."""


class NumericDomainError(KwspotError):
    """An input is outside the numeric domain of an operation (e.g. zero-norm vectors)."""


class LayoutError(KwspotError):
    """A corpus directory does not follow the documented layout."""


class ConfigError(KwspotError):
    """Invalid configuration or command-line usage."""


class TrainingError(KwspotError):
    """Training diverged or otherwise failed."""


class FormatError(KwspotError):
    """A binary artifact file is malformed."""
