"""One-dimensional split-operator simulator for light-pulse atom interferometers."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("lightpulse")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .errors import (
    CalibrationError,
    ConfigurationError,
    FitError,
    LightPulseError,
    LowContrastError,
    MeasurementError,
    NumericalError,
)
from .grid import Grid, Species, rubidium87

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "FitError",
    "Grid",
    "LightPulseError",
    "LowContrastError",
    "MeasurementError",
    "NumericalError",
    "Species",
    "rubidium87",
    "__version__",
]
