"""Exception hierarchy for the facade survey toolkit.

Every error raised by this package derives from :class:`FacadeScanError`,
so callers can catch one type at the pipeline boundary. The CLI maps
input-side errors to exit code 2 and processing-side errors to exit 3.
"""


class FacadeScanError(Exception):
    """Base class for all toolkit errors."""


class InvalidBoxError(FacadeScanError):
    """A bounding box violates its invariants (non-positive area, bad score, non-finite coords)."""


class TelemetryParseError(FacadeScanError):
    """A telemetry row or header could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"telemetry line {line_no}: {message}")
        self.line_no = line_no


class TelemetryOrderError(FacadeScanError):
    """Telemetry timestamps are not strictly increasing."""


class EmptyLogError(FacadeScanError):
    """A telemetry log contains a header but no samples."""


class PoseSyncError(FacadeScanError):
    """A frame timestamp falls outside the telemetry log (beyond slack)."""


class DetectionFormatError(FacadeScanError):
    """A detections/annotations document is structurally malformed."""


class DetectionValidationError(FacadeScanError):
    """A detection box or frame reference fails validation against the sequence."""


class ImageFormatError(FacadeScanError):
    """An image file is unsupported, truncated, or inconsistent with the sequence."""


class NoSeedError(FacadeScanError):
    """Post-processing was invoked on a frame with no seed detections."""


class BandTooSmallError(FacadeScanError):
    """A template does not fit inside its search band."""


class InvalidPitchError(FacadeScanError):
    """A relative pitch angle at or beyond +/- pi/2 cannot be projected."""


class ExtentError(FacadeScanError):
    """A facade extent is degenerate (zero or negative area)."""


class ConfigError(FacadeScanError):
    """A run or sequence configuration is invalid or references missing inputs."""


# Errors that indicate bad or inconsistent inputs (CLI exit code 2); everything
# else derived from FacadeScanError is treated as a processing error (exit 3).
INPUT_ERRORS = (
    TelemetryParseError,
    TelemetryOrderError,
    EmptyLogError,
    PoseSyncError,
    DetectionFormatError,
    DetectionValidationError,
    ImageFormatError,
    ConfigError,
)
