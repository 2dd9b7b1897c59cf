"""Exception hierarchy shared across the package."""


class MFLoadError(Exception):
    """Base class for all package errors."""


class ParameterError(MFLoadError, ValueError):
    """A parameter is outside its valid domain."""


class DegenerateInputError(MFLoadError, ValueError):
    """Input series is degenerate (e.g. constant) and cannot be analyzed."""


class EstimationError(MFLoadError):
    """Scaling estimation cannot proceed (series too short, no valid scales)."""


class InsufficientDataError(MFLoadError):
    """Not enough data points to evaluate the requested statistic."""


class ConfigurationError(MFLoadError, ValueError):
    """Invalid cluster / scenario / CLI configuration."""


class CalibrationError(MFLoadError):
    """Traffic calibration failed to reach its targets.

    Carries the best curve achieved so callers can report partial results.
    """

    def __init__(self, message, best_curve=None, trace=None):
        super().__init__(message)
        self.best_curve = best_curve
        self.trace = trace


class ParseError(MFLoadError, ValueError):
    """A CSV or config file could not be parsed; carries the line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
