"""Exceptions shared across the package.

ConfigError maps to process exit code 2, NumericalError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, parameters, or input files."""


class NumericalError(RuntimeError):
    """Stability or solvability failure at run time (CFL violation, blow-up)."""
