class ConfigError(ValueError):
    """Raised for invalid inputs, malformed maps or bad config entries."""


class DomainError(ValueError):
    """Raised when a closed-form bound is evaluated outside its domain."""
