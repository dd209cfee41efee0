"""Errors shared across subpackages."""


class ConfigurationError(ValueError):
    """Inconsistent model, skeleton or run configuration."""
