"""Footprint localization by iterative homography coregistration.

Given a photograph and rank-ordered geotagged satellite tile candidates,
the engine estimates a precise geographic footprint plus an inlier-count
confidence, iterating match-fit-warp over a 3x3 surroundings mosaic. The
package also ships the confidence-threshold calibration, a synthetic
ground-truth generator, and the benchmark harness around the engine.
"""

from .calibrate import (
    LabeledOutcome,
    LogisticModel,
    ThresholdDecision,
    calibrate_from_run,
    derive_threshold,
    fit_logistic,
)
from .engine import (
    CandidateTile,
    EngineConfig,
    LocalizationResult,
    QueryImage,
    coregister_candidate,
    localize,
)
from .features import (
    CorrespondenceSet,
    Keypoint,
    MatcherConfig,
    detect,
    describe,
    match,
    register_matcher,
    run_matcher,
)
from .geo import (
    Footprint,
    GeoPoint,
    MercPoint,
    TileGeom,
    footprint_contains,
    from_mercator,
    pixel_to_geo,
    quad_area,
    quad_is_convex,
    to_mercator,
)
from .raster import Mosaic, build_mosaic, load_image, resize_square, save_image, warp_perspective
from .robustfit import (
    FitResult,
    RansacConfig,
    apply,
    compose,
    dlt_homography,
    inverse,
    ransac_homography,
)
from .synth import SynthPair, SynthSpec, generate_texture, make_negative, make_pair

__version__ = "0.1.0"

__all__ = [
    "CandidateTile",
    "CorrespondenceSet",
    "EngineConfig",
    "FitResult",
    "Footprint",
    "GeoPoint",
    "Keypoint",
    "LabeledOutcome",
    "LocalizationResult",
    "LogisticModel",
    "MatcherConfig",
    "MercPoint",
    "Mosaic",
    "QueryImage",
    "RansacConfig",
    "SynthPair",
    "SynthSpec",
    "ThresholdDecision",
    "TileGeom",
    "apply",
    "build_mosaic",
    "calibrate_from_run",
    "compose",
    "coregister_candidate",
    "derive_threshold",
    "describe",
    "detect",
    "dlt_homography",
    "fit_logistic",
    "footprint_contains",
    "from_mercator",
    "generate_texture",
    "inverse",
    "load_image",
    "localize",
    "make_negative",
    "make_pair",
    "match",
    "pixel_to_geo",
    "quad_area",
    "quad_is_convex",
    "ransac_homography",
    "register_matcher",
    "resize_square",
    "run_matcher",
    "save_image",
    "to_mercator",
    "warp_perspective",
]
