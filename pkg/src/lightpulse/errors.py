"""Exception hierarchy shared across the package."""


class LightPulseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LightPulseError, ValueError):
    """Invalid parameters or config schema violation.

    ``field`` holds a dotted path into the config when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(LightPulseError, ArithmeticError):
    """Non-finite amplitudes or a solver that failed to converge."""

    def __init__(self, message, step=None, residual=None):
        self.step = step
        self.residual = residual
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class OutOfRangeError(LightPulseError, ValueError):
    """Query outside the validity window of a term."""


class TruncationError(NumericalError):
    """Population leaked into the hard-truncated edge of a finite basis."""


class MeasurementError(LightPulseError):
    """Ports cannot be integrated (overlap, outside grid)."""


class FitError(LightPulseError):
    """Fringe fit failed; ``trace`` holds the parameter iterates."""

    def __init__(self, message, trace=None):
        self.trace = trace or []
        super().__init__(message)


class LowContrastError(FitError):
    """Fitted contrast is below the noise floor."""


class CalibrationError(LightPulseError):
    """No admissible root or maximum in the bracket; ``curve`` holds samples."""

    def __init__(self, message, curve=None):
        self.curve = curve
        super().__init__(message)
