"""Synthetic ground-truth pairs for end-to-end pipeline verification.

A pair starts from a 3x3-tile procedural "world": the candidate is the
center tile, its neighbors are the eight surrounding crops, and the query
is rendered from the world through a sampled projective transform whose
exact value is kept as ground truth. Zero-overlap negatives come from two
independent worlds placed on disjoint map rectangles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .engine import CandidateTile, QueryImage
from .errors import DomainError
from .geo import Footprint, TileGeom, pixel_to_geo
from .raster import NEIGHBOR_KEYS, _resample, save_image, warp_perspective
from .robustfit import apply, compose, dlt_homography, inverse

# Map placement of synthetic tiles (normalized Mercator, ~40N latitude band).
_TILE_X0 = 0.52
_TILE_Y0 = 0.38
_TILE_EXTENT = 0.004
_NEGATIVE_SHIFT = 20 * _TILE_EXTENT  # disjoint-by-construction offset

_MIN_OVERLAP = 0.1


@dataclass(frozen=True)
class SynthSpec:
    base_side: int = 256
    rotation_range: float = 45.0  # degrees, +/- (retrieval TTA bounds relative rotation)
    scale_range: tuple[float, float] = (0.6, 1.6)
    perspective_jitter: float = 0.08  # max corner displacement, fraction of side
    noise_sigma: float = 0.02  # additive gaussian, [0,1] sample units
    seed: int = 0

    def __post_init__(self):
        if self.base_side < 64:
            raise DomainError("base_side must be >= 64")
        if self.perspective_jitter >= 0.25:
            raise DomainError("perspective_jitter must be < 0.25")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise DomainError("invalid scale_range")


@dataclass
class SynthPair:
    query: QueryImage
    candidate: CandidateTile
    true_h: np.ndarray | None  # candidate canonical frame -> query canonical frame
    overlap_fraction: float


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def generate_texture(side: int, seed: int, flat: bool = False) -> np.ndarray:
    """Deterministic corner-rich texture: multi-octave value noise plus
    random rectangles. flat=True returns a constant image (degenerate mode
    for detector tests)."""
    if side < 64:
        raise DomainError("texture side must be >= 64")
    if flat:
        return np.full((side, side), 0.5)
    rng = _rng(seed, 0x7E)
    img = np.zeros((side, side))
    # octaves down to fine grain so strong zooms still see matchable detail
    for cells, weight in ((4, 0.35), (8, 0.22), (16, 0.16), (32, 0.12), (64, 0.09), (128, 0.06)):
        grid = rng.random((min(cells, side), min(cells, side)))
        img += weight * _resample(grid, (side, side))
    for _ in range(80):
        rw = int(rng.integers(side // 32, side // 6))
        rh = int(rng.integers(side // 32, side // 6))
        x0 = int(rng.integers(0, side - rw))
        y0 = int(rng.integers(0, side - rh))
        img[y0:y0 + rh, x0:x0 + rw] += rng.uniform(-0.3, 0.3)
    img = 0.5 + (img - img.mean()) * (0.25 / max(img.std(), 1e-9))
    return np.clip(img, 0.02, 0.98)


def _clip_polygon_to_square(poly: np.ndarray, side: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against [0,side]^2."""
    edges = (
        lambda p: p[0] >= 0.0,
        lambda p: p[0] <= side,
        lambda p: p[1] >= 0.0,
        lambda p: p[1] <= side,
    )
    intersect = (
        lambda a, b: a + (b - a) * ((0.0 - a[0]) / (b[0] - a[0])),
        lambda a, b: a + (b - a) * ((side - a[0]) / (b[0] - a[0])),
        lambda a, b: a + (b - a) * ((0.0 - a[1]) / (b[1] - a[1])),
        lambda a, b: a + (b - a) * ((side - a[1]) / (b[1] - a[1])),
    )
    pts = [np.asarray(p, dtype=float) for p in poly]
    for inside, cross in zip(edges, intersect):
        if not pts:
            return np.zeros((0, 2))
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(cross(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(cross(prev, cur))
        pts = out
    return np.array(pts) if pts else np.zeros((0, 2))


def _poly_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(x @ np.roll(y, -1) - y @ np.roll(x, -1)) / 2.0)


def _tile_geom(side: int, x0: float = _TILE_X0, y0: float = _TILE_Y0) -> TileGeom:
    fp = Footprint.from_mercator_rect(x0, y0, x0 + _TILE_EXTENT, y0 + _TILE_EXTENT)
    return TileGeom(footprint=fp, width_px=side, height_px=side)


def _world_candidate(world: np.ndarray, side: int, rank: int, geom: TileGeom) -> CandidateTile:
    s = side
    crops = {
        "NW": world[0:s, 0:s], "N": world[0:s, s:2 * s], "NE": world[0:s, 2 * s:3 * s],
        "W": world[s:2 * s, 0:s], "E": world[s:2 * s, 2 * s:3 * s],
        "SW": world[2 * s:3 * s, 0:s], "S": world[2 * s:3 * s, s:2 * s],
        "SE": world[2 * s:3 * s, 2 * s:3 * s],
    }
    return CandidateTile(
        image=world[s:2 * s, s:2 * s].copy(),
        geom=geom,
        rank=rank,
        neighbors={k: v.copy() for k, v in crops.items()},
    )


def _sample_true_h(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.base_side
    theta = np.deg2rad(rng.uniform(-spec.rotation_range, spec.rotation_range))
    scale = rng.uniform(*spec.scale_range)
    tx, ty = rng.uniform(-0.1, 0.1, size=2) * s
    cx = cy = s / 2.0
    co, si = np.cos(theta), np.sin(theta)
    m = np.array(
        [
            [scale * co, -scale * si, tx + cx - scale * (co * cx - si * cy)],
            [scale * si, scale * co, ty + cy - scale * (si * cx + co * cy)],
            [0.0, 0.0, 1.0],
        ]
    )
    if spec.perspective_jitter == 0.0:
        return m
    corners = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])
    mapped = apply(m, corners)
    mapped = mapped + rng.uniform(
        -spec.perspective_jitter * s, spec.perspective_jitter * s, size=(4, 2)
    )
    return dlt_homography(corners, mapped)


def _random_metadata(rng: np.random.Generator) -> dict:
    return {
        "focal_length_mm": float(np.round(np.exp(rng.uniform(np.log(80), np.log(1600))), 1)),
        "tilt_deg": float(np.round(rng.uniform(0.0, 60.0), 1)),
        "cloud_cover_pct": float(np.round(rng.uniform(0.0, 80.0), 1)),
    }


def make_pair(spec: SynthSpec) -> SynthPair:
    """One positive pair with exact ground-truth homography and centerpoint."""
    s = spec.base_side
    world = generate_texture(3 * s, seed=spec.seed)
    rng = _rng(spec.seed, 0xA1)
    corners = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])

    true_h = None
    overlap = 0.0
    for _ in range(100):
        h = _sample_true_h(spec, rng)
        mapped = apply(h, corners)
        overlap = _poly_area(_clip_polygon_to_square(mapped, float(s))) / float(s * s)
        if overlap >= _MIN_OVERLAP:
            true_h = h
            break
    if true_h is None:
        raise DomainError("could not sample a transform with enough overlap")

    # candidate canonical frame -> world frame is a pure (+s, +s) translation
    t_world = np.array([[1.0, 0.0, s], [0.0, 1.0, s], [0.0, 0.0, 1.0]])
    h_world_to_q = compose(true_h, inverse(t_world))
    q_img = warp_perspective(world, h_world_to_q, (s, s))
    if spec.noise_sigma > 0:
        q_img = np.clip(q_img + rng.normal(0.0, spec.noise_sigma, q_img.shape), 0.0, 1.0)

    geom = _tile_geom(s)
    candidate = _world_candidate(world, s, rank=1, geom=geom)
    center_c0 = apply(inverse(true_h), np.array([s / 2.0, s / 2.0]))
    centerpoint = pixel_to_geo(geom, (float(center_c0[0]), float(center_c0[1])))

    meta = _random_metadata(rng)
    query = QueryImage(image=q_img, id=f"synth-{spec.seed:06d}", centerpoint=centerpoint, **meta)
    return SynthPair(query=query, candidate=candidate, true_h=true_h, overlap_fraction=overlap)


def make_negative(spec: SynthSpec, seed: int) -> SynthPair:
    """Zero-overlap pair: query and candidate from disjoint worlds and
    disjoint map rectangles."""
    s = spec.base_side
    world_q = generate_texture(3 * s, seed=_rng(seed, 0xB1).integers(0, 2**31))
    world_c = generate_texture(3 * s, seed=_rng(seed, 0xB2).integers(0, 2**31))
    rng = _rng(seed, 0xB3)

    q_img = world_q[s:2 * s, s:2 * s].copy()
    if spec.noise_sigma > 0:
        q_img = np.clip(q_img + rng.normal(0.0, spec.noise_sigma, q_img.shape), 0.0, 1.0)

    q_geom = _tile_geom(s, x0=_TILE_X0 - _NEGATIVE_SHIFT)
    centerpoint = pixel_to_geo(q_geom, (s / 2.0, s / 2.0))
    candidate = _world_candidate(world_c, s, rank=1, geom=_tile_geom(s))

    meta = _random_metadata(rng)
    query = QueryImage(image=q_img, id=f"synthneg-{seed:06d}", centerpoint=centerpoint, **meta)
    return SynthPair(query=query, candidate=candidate, true_h=None, overlap_fraction=0.0)


def _save_candidate(cand: CandidateTile, images_dir: Path, stem: str) -> dict:
    center_path = f"images/{stem}.png"
    save_image(images_dir / f"{stem}.png", cand.image)
    neighbors = {}
    for key in NEIGHBOR_KEYS:
        if key in cand.neighbors:
            rel = f"images/{stem}_{key}.png"
            save_image(images_dir / f"{stem}_{key}.png", cand.neighbors[key])
            neighbors[key] = rel
    fp = [[c.lat, c.lon] for c in cand.geom.footprint.corners]
    return {
        "rank": cand.rank,
        "image_path": center_path,
        "footprint": fp,
        "neighbors": neighbors,
    }


def write_manifest(
    out_dir,
    n_positives: int,
    spec: SynthSpec,
    n_negatives: int = 0,
    distractors: int = 0,
) -> Path:
    """Render pairs to disk as a benchmark manifest (PNG images + JSON).

    Positive queries get `distractors` disjoint candidates at the leading
    ranks and their true candidate right after; negative queries get a
    single disjoint candidate labeled is_positive=false.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    queries = []
    for i in range(n_positives):
        pair_seed = int(_rng(spec.seed, 0xC0, i).integers(0, 2**31))
        pair = make_pair(replace(spec, seed=pair_seed))
        qid = f"q{i:04d}"
        q_rel = f"images/{qid}.png"
        save_image(images_dir / f"{qid}.png", pair.query.image)

        cands = []
        for d in range(distractors):
            neg = make_negative(spec, seed=int(_rng(spec.seed, 0xC1, i, d).integers(0, 2**31)))
            neg.candidate.rank = d + 1
            entry = _save_candidate(neg.candidate, images_dir, f"{qid}_c{d + 1}")
            entry["is_positive"] = False
            cands.append(entry)
        pair.candidate.rank = distractors + 1
        entry = _save_candidate(pair.candidate, images_dir, f"{qid}_c{distractors + 1}")
        entry["is_positive"] = True
        cands.append(entry)

        queries.append({
            "id": qid,
            "image_path": q_rel,
            "centerpoint": {"lat": pair.query.centerpoint.lat, "lon": pair.query.centerpoint.lon},
            "focal_length_mm": pair.query.focal_length_mm,
            "tilt_deg": pair.query.tilt_deg,
            "cloud_cover_pct": pair.query.cloud_cover_pct,
            "candidates": cands,
        })

    for i in range(n_negatives):
        neg = make_negative(spec, seed=int(_rng(spec.seed, 0xC2, i).integers(0, 2**31)))
        qid = f"n{i:04d}"
        save_image(images_dir / f"{qid}.png", neg.query.image)
        entry = _save_candidate(neg.candidate, images_dir, f"{qid}_c1")
        entry["is_positive"] = False
        queries.append({
            "id": qid,
            "image_path": f"images/{qid}.png",
            "centerpoint": {"lat": neg.query.centerpoint.lat, "lon": neg.query.centerpoint.lon},
            "focal_length_mm": neg.query.focal_length_mm,
            "tilt_deg": neg.query.tilt_deg,
            "cloud_cover_pct": neg.query.cloud_cover_pct,
            "candidates": [entry],
        })

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps({"queries": queries}, indent=2))
    return manifest_path
