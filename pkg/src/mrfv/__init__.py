"""Fully adaptive multiresolution finite-volume solver for strongly
degenerate parabolic equations with discontinuous flux parameters."""

from .errors import ConfigError, NumericalError
from .models import (
    ClarifierParams,
    ModelSpec,
    TrafficParams,
    build_clarifier,
    build_linear_advection,
    build_traffic,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericalError",
    "ModelSpec",
    "TrafficParams",
    "ClarifierParams",
    "build_traffic",
    "build_clarifier",
    "build_linear_advection",
    "__version__",
]
