"""Built-in classical keypoint matcher and the matcher backend registry.

The built-in backend is a SIFT-lite: multi-scale Harris corners, dominant
gradient orientation, 8x8 oriented intensity patches, mutual nearest
neighbor matching with a ratio test. It is deterministic, needs no model
weights, and is good enough for the moderate-rotation regime that rotation
test-time augmentation guarantees on the retrieval side.

External backends register under a string identifier and receive the same
canonical square images; see the bridge module for subprocess backends.
"""

from __future__ import annotations

import os
import shlex
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import BackendError, DomainError
from .raster import resize_square, to_gray

PYRAMID_LEVELS = 3
PYRAMID_FACTOR = 0.5
NMS_RADIUS = 3
HARRIS_K = 0.04
DESC_SIZE = 64  # 8x8 grid
_DESC_SPACING = 1.5  # grid step in units of keypoint scale
_BORDER = 8  # detection margin at each pyramid level, px

# Keypoint budgets swept in the benchmark grid.
KEYPOINT_BUDGETS = (1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float  # radians
    response: float


@dataclass(frozen=True)
class MatcherConfig:
    max_keypoints: int = 2048
    image_side: int = 768
    ratio_threshold: float = 0.8

    def __post_init__(self):
        if self.max_keypoints < 4:
            raise DomainError("max_keypoints must be >= 4")
        if self.image_side < 64:
            raise DomainError("image_side must be >= 64")


@dataclass
class CorrespondenceSet:
    """Matched point pairs between a query and a candidate image.

    Coordinates are expressed in the canonical (square resized) frames.
    Pairs are one-to-one on both sides; scores live in [0,1].
    """

    query_pts: np.ndarray  # (N,2)
    cand_pts: np.ndarray  # (N,2)
    scores: np.ndarray  # (N,)
    source: str = "builtin"

    def __len__(self) -> int:
        return int(len(self.query_pts))

    @staticmethod
    def empty(source: str = "builtin") -> "CorrespondenceSet":
        z = np.zeros((0, 2), dtype=float)
        return CorrespondenceSet(z, z.copy(), np.zeros(0, dtype=float), source)


_DETECT_SMOOTH = 1.0  # gaussian presmoothing before gradients, px


def _harris_response(img: np.ndarray) -> np.ndarray:
    smooth = ndimage.gaussian_filter(img, sigma=_DETECT_SMOOTH)
    gy, gx = np.gradient(smooth)
    sxx = ndimage.gaussian_filter(gx * gx, sigma=1.5)
    syy = ndimage.gaussian_filter(gy * gy, sigma=1.5)
    sxy = ndimage.gaussian_filter(gx * gy, sigma=1.5)
    return (sxx * syy - sxy * sxy) - HARRIS_K * (sxx + syy) ** 2


def _dominant_orientations(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """36-bin gradient-orientation histogram peak over a 16x16 patch."""
    smooth = ndimage.gaussian_filter(img, sigma=_DETECT_SMOOTH)
    gy, gx = np.gradient(smooth)
    h, w = img.shape
    offs = np.arange(-8, 8)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    py = np.clip(ys[:, None] + oy.ravel()[None, :], 0, h - 1)
    px = np.clip(xs[:, None] + ox.ravel()[None, :], 0, w - 1)
    ang = np.arctan2(gy[py, px], gx[py, px])
    mag = np.hypot(gx[py, px], gy[py, px])
    bins = np.floor((ang + np.pi) / (2 * np.pi) * 36).astype(int) % 36
    hist = np.zeros((len(ys), 36))
    rows = np.repeat(np.arange(len(ys)), bins.shape[1])
    np.add.at(hist, (rows, bins.ravel()), mag.ravel())
    peak = np.argmax(hist, axis=1)
    # parabolic interpolation between the peak and its circular neighbors
    k = np.arange(len(ys))
    left = hist[k, (peak - 1) % 36]
    mid = hist[k, peak]
    right = hist[k, (peak + 1) % 36]
    denom = left - 2.0 * mid + right
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (left - right) / denom, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    return (peak + 0.5 + shift) / 36.0 * 2 * np.pi - np.pi


def _subpixel_offsets(resp: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """2-D quadratic fit around each peak; offsets clipped to half a pixel."""
    gx = (resp[ys, xs + 1] - resp[ys, xs - 1]) / 2.0
    gy = (resp[ys + 1, xs] - resp[ys - 1, xs]) / 2.0
    hxx = resp[ys, xs + 1] - 2.0 * resp[ys, xs] + resp[ys, xs - 1]
    hyy = resp[ys + 1, xs] - 2.0 * resp[ys, xs] + resp[ys - 1, xs]
    hxy = (
        resp[ys + 1, xs + 1] - resp[ys + 1, xs - 1]
        - resp[ys - 1, xs + 1] + resp[ys - 1, xs - 1]
    ) / 4.0
    det = hxx * hyy - hxy * hxy
    safe = np.abs(det) > 1e-18
    det = np.where(safe, det, 1.0)
    dx = np.where(safe, -(hyy * gx - hxy * gy) / det, 0.0)
    dy = np.where(safe, -(hxx * gy - hxy * gx) / det, 0.0)
    return np.clip(dx, -0.5, 0.5), np.clip(dy, -0.5, 0.5)


def detect(img: np.ndarray, cfg: MatcherConfig) -> list[Keypoint]:
    """Multi-scale Harris corners, NMS radius 3, top-K by response.

    Peak positions are refined to subpixel accuracy with a quadratic fit,
    so coarse-level detections stay tight in base-image coordinates.
    """
    if img.ndim != 2:
        raise DomainError("detect expects a grayscale image")
    if min(img.shape) < 16:
        raise DomainError("image too small for detection (side < 16)")

    found: list[tuple] = []
    level = img
    for lvl in range(PYRAMID_LEVELS):
        if min(level.shape) < 2 * _BORDER:
            break
        scale = (1.0 / PYRAMID_FACTOR) ** lvl
        resp = _harris_response(level)
        local_max = ndimage.maximum_filter(resp, size=2 * NMS_RADIUS + 1, mode="nearest")
        peaks = (resp >= local_max) & (resp > 1e-12)
        peaks[:_BORDER, :] = False
        peaks[-_BORDER:, :] = False
        peaks[:, :_BORDER] = False
        peaks[:, -_BORDER:] = False
        ys, xs = np.nonzero(peaks)
        if len(ys) == 0:
            level = resize_square(level, int(level.shape[0] * PYRAMID_FACTOR))
            continue
        dx, dy = _subpixel_offsets(resp, ys, xs)
        oris = _dominant_orientations(level, ys, xs)
        seen: set[tuple[int, int]] = set()  # NMS plateaus refine to one point
        for y, x, ox, oy, o in zip(ys, xs, dx, dy, oris):
            key = (int(round(x + ox)), int(round(y + oy)))
            if key in seen:
                continue
            seen.add(key)
            found.append((
                float(resp[y, x]),
                float((x + ox) * scale),
                float((y + oy) * scale),
                scale,
                float(o),
            ))
        level = resize_square(level, int(level.shape[0] * PYRAMID_FACTOR))

    # deterministic order: strongest first, fine scales before coarse on ties
    found.sort(key=lambda t: (-t[0], t[3], t[2], t[1]))
    found = found[: cfg.max_keypoints]
    return [Keypoint(x=x, y=y, scale=s, orientation=o, response=r) for r, x, y, s, o in found]


_GRID = np.stack(
    np.meshgrid(np.arange(8) - 3.5, np.arange(8) - 3.5, indexing="ij"), axis=-1
).reshape(-1, 2)  # (64, 2) as (dy, dx)


_DESC_SMOOTH = 0.8  # gaussian sigma per unit of keypoint scale


def describe_batch(img: np.ndarray, kps: list[Keypoint]) -> np.ndarray:
    """Descriptors for all keypoints at once, (K, 64) unit rows.

    Each keypoint samples a copy of the image smoothed proportionally to
    its scale, keeping coarse keypoints consistent with their detection
    level and suppressing pixel noise.
    """
    if not kps:
        return np.zeros((0, DESC_SIZE), dtype=float)
    from .raster import _bilinear

    xs = np.array([k.x for k in kps])
    ys = np.array([k.y for k in kps])
    scales = np.array([k.scale for k in kps])
    oris = np.array([k.orientation for k in kps])
    # co-rotate the sampling grid with the feature so descriptors are upright
    c, s = np.cos(oris), np.sin(oris)
    dy = _GRID[:, 0][None, :] * scales[:, None] * _DESC_SPACING
    dx = _GRID[:, 1][None, :] * scales[:, None] * _DESC_SPACING
    rx = c[:, None] * dx - s[:, None] * dy
    ry = s[:, None] * dx + c[:, None] * dy

    vals = np.empty((len(kps), DESC_SIZE), dtype=float)
    for scale in np.unique(scales):
        sel = scales == scale
        smooth = ndimage.gaussian_filter(img, sigma=_DESC_SMOOTH * scale)
        vals[sel] = _bilinear(smooth, xs[sel, None] + rx[sel], ys[sel, None] + ry[sel], fill=None)
    vals = vals - vals.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(vals, axis=1)
    flat = vals.std(axis=1) < 1e-6
    out = np.empty_like(vals)
    ok = ~flat
    out[ok] = vals[ok] / norms[ok][:, None]
    out[flat] = 1.0 / 8.0  # zero-protected uniform fallback, unit norm
    return out


def describe(img: np.ndarray, kp: Keypoint) -> np.ndarray:
    """64-vector descriptor: oriented, mean-free, L2-normalized patch."""
    return describe_batch(img, [kp])[0]


def _top2_neighbors(qd: np.ndarray, cd: np.ndarray, block: int = 512):
    """Nearest and second-nearest candidate index/distance per query row."""
    n = len(qd)
    nn_idx = np.zeros(n, dtype=np.intp)
    nn_d = np.full(n, np.inf)
    nn2_d = np.full(n, np.inf)
    for start in range(0, n, block):
        stop = min(start + block, n)
        # unit vectors: d^2 = 2 - 2 q.c
        sim = qd[start:stop] @ cd.T
        d2 = np.maximum(2.0 - 2.0 * sim, 0.0)
        order = np.argsort(d2, axis=1, kind="stable")
        nn_idx[start:stop] = order[:, 0]
        nn_d[start:stop] = np.sqrt(d2[np.arange(stop - start), order[:, 0]])
        if d2.shape[1] > 1:
            nn2_d[start:stop] = np.sqrt(d2[np.arange(stop - start), order[:, 1]])
    return nn_idx, nn_d, nn2_d


def match(
    q_desc: np.ndarray,
    c_desc: np.ndarray,
    ratio: float,
    q_pts: np.ndarray | None = None,
    c_pts: np.ndarray | None = None,
    source: str = "builtin",
) -> CorrespondenceSet:
    """Mutual nearest neighbors passing the ratio test on both sides.

    Applying the ratio test symmetrically keeps match(A,B) and match(B,A)
    the same pair set. Scores map descriptor distance to [0,1].
    """
    q_desc = np.asarray(q_desc, dtype=float)
    c_desc = np.asarray(c_desc, dtype=float)
    if q_desc.ndim != 2 or c_desc.ndim != 2 or q_desc.shape[1] != c_desc.shape[1]:
        raise DomainError("descriptor arrays must be 2-D with equal width")
    if len(q_desc) == 0 or len(c_desc) == 0:
        return CorrespondenceSet.empty(source)
    if q_pts is None:
        q_pts = np.stack([np.arange(len(q_desc), dtype=float), np.zeros(len(q_desc))], axis=1)
    if c_pts is None:
        c_pts = np.stack([np.arange(len(c_desc), dtype=float), np.zeros(len(c_desc))], axis=1)

    fwd_idx, fwd_d, fwd_d2 = _top2_neighbors(q_desc, c_desc)
    bwd_idx, bwd_d, bwd_d2 = _top2_neighbors(c_desc, q_desc)

    qi = np.arange(len(q_desc))
    mutual = bwd_idx[fwd_idx] == qi
    ratio_q = fwd_d < ratio * fwd_d2
    ratio_c = fwd_d < ratio * bwd_d2[fwd_idx]
    keep = mutual & ratio_q & ratio_c

    qi = qi[keep]
    ci = fwd_idx[keep]
    scores = 1.0 - fwd_d[keep] / 2.0
    return CorrespondenceSet(
        query_pts=np.asarray(q_pts, dtype=float)[qi],
        cand_pts=np.asarray(c_pts, dtype=float)[ci],
        scores=scores,
        source=source,
    )


def _builtin_backend(q: np.ndarray, c: np.ndarray, cfg: MatcherConfig) -> CorrespondenceSet:
    qg, cg = to_gray(q), to_gray(c)
    qk = detect(qg, cfg)
    ck = detect(cg, cfg)
    if not qk or not ck:
        return CorrespondenceSet.empty("builtin")
    qd = describe_batch(qg, qk)
    cd = describe_batch(cg, ck)
    q_pts = np.array([[k.x, k.y] for k in qk])
    c_pts = np.array([[k.x, k.y] for k in ck])
    return match(qd, cd, cfg.ratio_threshold, q_pts=q_pts, c_pts=c_pts)


MatcherBackend = Callable[[np.ndarray, np.ndarray, MatcherConfig], CorrespondenceSet]

MATCHER_REGISTRY: dict[str, MatcherBackend] = {"builtin": _builtin_backend}


def register_matcher(name: str, backend: MatcherBackend) -> None:
    MATCHER_REGISTRY[name] = backend


def _resolve_backend(name: str) -> MatcherBackend:
    if name in MATCHER_REGISTRY:
        return MATCHER_REGISTRY[name]
    if name == "bridge" or name.startswith("bridge:"):
        from .bridge import bridge_backend  # lazy: avoids subprocess machinery on import

        if name == "bridge":
            spec = os.environ.get("EARTHMATCH_BRIDGE_PATH", "")
            if not spec:
                raise BackendError(
                    "matcher 'bridge' needs EARTHMATCH_BRIDGE_PATH to point at an executable"
                )
        else:
            spec = name.split(":", 1)[1]
        backend = bridge_backend(shlex.split(spec))
        MATCHER_REGISTRY[name] = backend
        return backend
    raise BackendError(f"unknown matcher backend {name!r}")


def run_matcher(
    backend: str, q: np.ndarray, c: np.ndarray, cfg: MatcherConfig
) -> CorrespondenceSet:
    """Resize both images to the canonical square side and dispatch.

    Returned correspondences are expressed in the resized frames; outputs
    from any backend are bounds-checked before use.
    """
    fn = _resolve_backend(backend)
    q_canon = resize_square(q, cfg.image_side)
    c_canon = resize_square(c, cfg.image_side)
    cs = fn(q_canon, c_canon, cfg)
    side = float(cfg.image_side)
    for label, pts in (("query", cs.query_pts), ("candidate", cs.cand_pts)):
        if len(pts) and (np.any(pts < 0.0) or np.any(pts >= side)):
            raise BackendError(
                f"backend {backend!r} returned {label} coordinates outside the "
                f"canonical {cfg.image_side}px frame"
            )
    cs.source = backend
    return cs
