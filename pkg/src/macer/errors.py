class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class FormatError(ValueError):
    """A binary or text file does not match its declared layout."""


class ConfigError(ValueError):
    """A run configuration is invalid; the message names the offending key."""
