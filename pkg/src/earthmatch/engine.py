"""Iterative coregistration over ranked candidate tiles.

For each candidate, matching and homography fitting run for a fixed number
of iterations (at most four). Each iteration re-renders the candidate from
the 3x3 surroundings mosaic through the composed homography, so the match
target keeps gaining overlap with the query. A candidate is rejected the
moment any stopping criterion fires:

  (i)   fewer matches than the minimum needed for a homography,
  (ii)  the predicted footprint is non-convex,
  (iii) the predicted footprint area exceeds the allowed multiple of one
        tile (the surroundings extent).

Candidates are tried in retrieval rank order; the final inlier count of an
accepted candidate is the confidence fed to the calibrated threshold.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, EstimationError, TooFewMatchesError
from .features import CorrespondenceSet, MatcherConfig, run_matcher
from .geo import (
    Footprint,
    GeoPoint,
    MercPoint,
    TileGeom,
    from_mercator,
    pixel_to_mercator,
    quad_area,
    quad_is_convex,
)
from .raster import build_mosaic, resize_square, warp_perspective
from .robustfit import RansacConfig, compose, inverse, ransac_homography

logger = logging.getLogger(__name__)

# Stopping / rejection reasons.
TOO_FEW_MATCHES = "TooFewMatches"
NON_CONVEX_FOOTPRINT = "NonConvexFootprint"
AREA_EXCEEDED = "AreaExceeded"
BELOW_INLIER_THRESHOLD = "BelowInlierThreshold"
ESTIMATION_FAILURE = "EstimationFailure"

# Query statuses.
LOCALIZED = "Localized"
REJECTED = "Rejected"
NO_CANDIDATE_ACCEPTED = "NoCandidateAccepted"


@dataclass
class QueryImage:
    image: np.ndarray
    id: str
    focal_length_mm: float | None = None
    tilt_deg: float | None = None
    cloud_cover_pct: float | None = None
    centerpoint: GeoPoint | None = None


@dataclass
class CandidateTile:
    image: np.ndarray
    geom: TileGeom
    rank: int
    neighbors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.rank <= 10:
            raise DomainError(f"candidate rank {self.rank} outside [1, 10]")


@dataclass(frozen=True)
class EngineConfig:
    matcher: str = "builtin"
    matcher_cfg: MatcherConfig = MatcherConfig()
    ransac_cfg: RansacConfig = RansacConfig()
    max_iterations: int = 4
    min_matches: int = 4
    max_area_ratio: float = 9.0
    inlier_threshold: int | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.min_matches < 4:
            raise DomainError("min_matches must be >= 4")


@dataclass
class CandidateOutcome:
    rank: int
    accepted: bool  # survived every iteration's checks
    iterations_run: int
    reject_reason: str | None
    inlier_count: int
    homography: np.ndarray | None  # mosaic frame -> query canonical frame
    footprint: Footprint | None
    wall_time_s: float = 0.0


@dataclass
class LocalizationResult:
    query_id: str
    status: str
    footprint: Footprint | None
    inlier_count: int
    accepted_rank: int | None
    iterations_run: list[int]
    reject_reasons: list[str | None]
    wall_time_s: float
    candidates: list[CandidateOutcome] = field(default_factory=list)


def _iteration_seed(base: int, rank: int, iteration: int) -> int:
    # one base seed fans out deterministically per candidate and iteration
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, rank, iteration])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _predicted_merc_quad(a: np.ndarray, mosaic_geom: TileGeom, side: int) -> np.ndarray:
    """Mercator corners of the query footprint implied by a (mosaic->query)."""
    corners = np.array(
        [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]], dtype=float
    )
    back = inverse(a)
    ph = np.column_stack([corners, np.ones(4)])
    q = (back @ ph.T).T
    w = q[:, 2]
    if np.any(np.abs(w) <= 1e-12):
        raise EstimationError("footprint corner maps to infinity")
    mosaic_px = q[:, :2] / w[:, None]
    return pixel_to_mercator(mosaic_geom, mosaic_px)


def _merc_quad_to_footprint(quad: np.ndarray) -> Footprint:
    pts = tuple(from_mercator(MercPoint(float(x), float(y))) for x, y in quad)
    return Footprint(corners=pts)


def coregister_candidate(
    q: QueryImage, c: CandidateTile, cfg: EngineConfig
) -> CandidateOutcome:
    """Run the iterative match-fit-warp loop for one candidate."""
    t0 = time.perf_counter()
    side = cfg.matcher_cfg.image_side

    def rejected(reason: str, iters: int) -> CandidateOutcome:
        return CandidateOutcome(
            rank=c.rank,
            accepted=False,
            iterations_run=iters,
            reject_reason=reason,
            inlier_count=0,
            homography=None,
            footprint=None,
            wall_time_s=time.perf_counter() - t0,
        )

    q_canon = resize_square(q.image, side)
    center = resize_square(c.image, side)
    neighbors = {k: resize_square(v, side) for k, v in c.neighbors.items() if v is not None}
    geom_canon = TileGeom(footprint=c.geom.footprint, width_px=side, height_px=side)
    mosaic = build_mosaic(center, geom_canon, neighbors)
    tile_area = geom_canon.mercator_area()

    # translation taking the candidate's canonical frame into the mosaic frame
    t = np.array([[1.0, 0.0, side], [0.0, 1.0, side], [0.0, 0.0, 1.0]])
    t_inv = inverse(t)

    a: np.ndarray | None = None
    merc_quad: np.ndarray | None = None
    fit = None
    current = mosaic.image[side:2 * side, side:2 * side]

    for i in range(cfg.max_iterations):
        cs: CorrespondenceSet = run_matcher(cfg.matcher, q_canon, current, cfg.matcher_cfg)
        if len(cs) < cfg.min_matches:
            return rejected(TOO_FEW_MATCHES, i)
        seed = _iteration_seed(cfg.ransac_cfg.rng_seed, c.rank, i)
        try:
            fit = ransac_homography(cs, replace(cfg.ransac_cfg, rng_seed=seed))
        except TooFewMatchesError:
            return rejected(TOO_FEW_MATCHES, i)
        except EstimationError:
            return rejected(ESTIMATION_FAILURE, i)

        a = compose(fit.h, t_inv) if a is None else compose(fit.h, a)
        try:
            merc_quad = _predicted_merc_quad(a, mosaic.geom, side)
        except (EstimationError, DomainError):
            return rejected(ESTIMATION_FAILURE, i)
        if not quad_is_convex(merc_quad):
            return rejected(NON_CONVEX_FOOTPRINT, i)
        if quad_area(merc_quad) > cfg.max_area_ratio * tile_area:
            return rejected(AREA_EXCEEDED, i)
        if i + 1 < cfg.max_iterations:
            try:
                current = warp_perspective(mosaic.image, a, (side, side))
            except EstimationError:
                return rejected(ESTIMATION_FAILURE, i)

    try:
        footprint = _merc_quad_to_footprint(merc_quad)
    except DomainError:
        return rejected(ESTIMATION_FAILURE, cfg.max_iterations)

    return CandidateOutcome(
        rank=c.rank,
        accepted=True,
        iterations_run=cfg.max_iterations,
        reject_reason=None,
        inlier_count=fit.inlier_count,
        homography=a,
        footprint=footprint,
        wall_time_s=time.perf_counter() - t0,
    )


def localize(
    q: QueryImage,
    candidates: list[CandidateTile],
    cfg: EngineConfig,
    exhaust_all: bool = False,
) -> LocalizationResult:
    """Try candidates in rank order; stop at the first confident acceptance.

    With a configured inlier threshold, acceptances below it are recorded
    as BelowInlierThreshold and the search continues. exhaust_all keeps
    processing every candidate (the selection rule is unchanged), which is
    what benchmark timing and calibration data collection want.
    """
    if not candidates:
        raise DomainError("localize needs at least one candidate")
    t0 = time.perf_counter()
    ordered = sorted(candidates, key=lambda c: c.rank)
    outcomes: list[CandidateOutcome] = []
    for cand in ordered:
        out = coregister_candidate(q, cand, cfg)
        if out.accepted and cfg.inlier_threshold is not None:
            if out.inlier_count < cfg.inlier_threshold:
                out.reject_reason = BELOW_INLIER_THRESHOLD
        outcomes.append(out)
        confident = out.accepted and out.reject_reason is None
        if confident and not exhaust_all:
            break

    chosen = next((o for o in outcomes if o.accepted and o.reject_reason is None), None)
    if chosen is not None:
        status = LOCALIZED
        footprint = chosen.footprint
        inliers = chosen.inlier_count
        rank = chosen.rank
    elif any(o.accepted for o in outcomes):
        status = REJECTED  # geometric acceptances existed, all below threshold
        footprint = None
        inliers = max(o.inlier_count for o in outcomes if o.accepted)
        rank = None
    else:
        status = NO_CANDIDATE_ACCEPTED
        footprint = None
        inliers = 0
        rank = None

    result = LocalizationResult(
        query_id=q.id,
        status=status,
        footprint=footprint,
        inlier_count=inliers,
        accepted_rank=rank,
        iterations_run=[o.iterations_run for o in outcomes],
        reject_reasons=[o.reject_reason for o in outcomes],
        wall_time_s=time.perf_counter() - t0,
        candidates=outcomes,
    )
    logger.debug("query %s -> %s (rank=%s, inliers=%d)", q.id, status, rank, inliers)
    return result
