"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid static configuration: bad indices, unknown protocol, broken payoff table."""


class InputError(ValueError):
    """Invalid runtime input: malformed features, empty vectors, non-binary bits."""
