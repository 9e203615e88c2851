"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input violates a documented precondition (bad range, bad geometry)."""


class EstimationError(RuntimeError):
    """Geometric estimation failed (degenerate or singular configuration)."""


class TooFewMatchesError(EstimationError):
    """Fewer correspondences than the minimum needed to fit a model."""


class BackendError(RuntimeError):
    """A matcher backend misbehaved (unreachable, bad protocol, bad output)."""


class ManifestError(ValueError):
    """Benchmark manifest failed schema validation."""


class CalibrationError(ValueError):
    """Threshold calibration cannot proceed on the given outcomes."""


class SingleClassError(CalibrationError):
    """Labeled outcomes contain only one class."""


class NonMonotoneModelError(CalibrationError):
    """Confidence model is not increasing in the inlier count."""
