"""Exception hierarchy shared by every stage of the calibration pipeline."""

from __future__ import annotations


class CalibrationError(Exception):
    """Base class for all errors raised by reidcalib."""


class ConfigError(CalibrationError):
    """Malformed or inconsistent configuration / input files."""


class DistortionConvergenceError(CalibrationError):
    """Inverse distortion did not converge; the point should be dropped."""


class DegenerateConfigurationError(CalibrationError):
    """Point configuration does not determine the essential matrix."""


class InsufficientInliersError(CalibrationError):
    """RANSAC found fewer than the minimum number of consistent pairs."""


class CheiralityError(CalibrationError):
    """No pose candidate puts a majority of points in front of both cameras."""


class BehindCameraError(CalibrationError):
    """A point has non-positive depth in a camera."""


class LowParallaxError(CalibrationError):
    """Viewing rays are too close to parallel to triangulate."""


class DegeneratePriorError(CalibrationError):
    """The reconstructed prior segment is too short to fix the scale."""


class MissingFeatureError(CalibrationError):
    """A box needed for pooling carries no embedding."""


class EmptyCorrespondenceError(CalibrationError):
    """A camera pair produced no point correspondences."""


class NonConvergenceError(CalibrationError):
    """Levenberg-Marquardt gave up; ``state`` holds the best problem seen."""

    def __init__(self, message: str, state=None, cost_trace=None):
        super().__init__(message)
        self.state = state
        self.cost_trace = list(cost_trace or [])
