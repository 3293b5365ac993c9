"""Exceptions shared across the package.

Anything that maps to a CLI exit code gets its own class; everything else
raises plain ValueError.
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration input. CLI exit code 1."""


class DivergenceError(RuntimeError):
    """A loss or gradient went non-finite during training. CLI exit code 2."""
