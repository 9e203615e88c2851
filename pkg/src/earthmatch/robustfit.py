"""Planar homography estimation: normalized DLT, seeded RANSAC, refit.

RANSAC parameters default to the OpenCV findHomography defaults
(threshold 3.0 px, confidence 0.995, 2000 iterations) but everything here
is self-contained. Inliers use the symmetric transfer error: the larger of
forward and backward reprojection error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EstimationError, TooFewMatchesError
from .features import CorrespondenceSet


@dataclass(frozen=True)
class RansacConfig:
    reproj_threshold: float = 3.0
    confidence: float = 0.995
    max_iterations: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if self.reproj_threshold <= 0:
            raise DomainError("reproj_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise DomainError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class FitResult:
    h: np.ndarray  # 3x3, maps candidate points onto query points
    inlier_mask: np.ndarray
    inlier_count: int


def normalize_h(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if abs(h[2, 2]) > 1e-12:
        return h / h[2, 2]
    return h.copy()


def _hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 1e-300 else 1.0
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    ph = np.column_stack([pts, np.ones(len(pts))])
    pn = (t @ ph.T).T
    return pn[:, :2], t


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Hartley-normalized direct linear transform, exact on clean inputs."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4 or len(src) != len(dst):
        raise EstimationError("DLT needs at least 4 point pairs")
    sn, ts = _hartley_normalization(src)
    dn, td = _hartley_normalization(dst)
    n = len(sn)
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    zeros = np.zeros(n)
    ones = np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v])
    _, sv, vt = np.linalg.svd(a)
    # rank < 8 (relative to the leading singular value) means a degenerate
    # configuration: no unique homography
    if sv[7] <= 1e-9 * sv[0]:
        raise EstimationError("degenerate point configuration (rank-deficient system)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    return normalize_h(h)


def apply(h: np.ndarray, p) -> np.ndarray:
    """Apply a homography to one point (2,) or many (N,2)."""
    h = np.asarray(h, dtype=float)
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = (h @ ph.T).T
    w = q[:, 2]
    if np.any(np.abs(w) <= 1e-12):
        raise DomainError("point maps to infinity (zero homogeneous coordinate)")
    out = q[:, :2] / w[:, None]
    return out[0] if single else out


def compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Homography equal to applying inner first, then outer."""
    return normalize_h(np.asarray(outer, float) @ np.asarray(inner, float))


def inverse(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.det(h)) <= 1e-12:
        raise EstimationError("homography is singular")
    return normalize_h(np.linalg.inv(h))


def _symmetric_error(h: np.ndarray, cand: np.ndarray, query: np.ndarray) -> np.ndarray:
    """max(forward, backward) reprojection error per pair; inf where the
    projection degenerates."""
    hinv = np.linalg.inv(h)

    def proj_err(m, pts, target):
        ph = np.column_stack([pts, np.ones(len(pts))])
        q = (m @ ph.T).T
        w = q[:, 2]
        bad = np.abs(w) <= 1e-12
        w = np.where(bad, 1.0, w)
        d = q[:, :2] / w[:, None] - target
        err = np.hypot(d[:, 0], d[:, 1])
        return np.where(bad, np.inf, err)

    fwd = proj_err(h, cand, query)
    bwd = proj_err(hinv, query, cand)
    return np.maximum(fwd, bwd)


_CHUNK = 128  # hypotheses solved per batched SVD call


def _batched_hypotheses(cand_n, query_n, idx):
    """Solve one DLT per 4-point sample, (m,4) index rows -> (m,3,3)."""
    x = cand_n[idx, 0]
    y = cand_n[idx, 1]
    u = query_n[idx, 0]
    v = query_n[idx, 1]
    m = idx.shape[0]
    zeros = np.zeros_like(x)
    ones = np.ones_like(x)
    rows_a = np.stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u], axis=-1)
    rows_b = np.stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v], axis=-1)
    a = np.empty((m, 8, 9))
    a[:, 0::2] = rows_a
    a[:, 1::2] = rows_b
    _, sv, vt = np.linalg.svd(a)
    h = vt[:, -1, :].reshape(m, 3, 3)
    good = sv[:, 7] > 1e-9 * sv[:, 0]
    return h, good


def ransac_homography(cs: CorrespondenceSet, cfg: RansacConfig) -> FitResult:
    """Seeded vanilla RANSAC over 4-point DLT hypotheses.

    Hypotheses are sampled and solved in batches for speed; the adaptive
    iteration bound log(1-confidence)/log(1-w^4) still caps the total
    at max_iterations. The best hypothesis is refit on its inlier set;
    the refit is kept only if it does not lose inliers, so the reported
    count never decreases.
    """
    cand = np.asarray(cs.cand_pts, dtype=float)
    query = np.asarray(cs.query_pts, dtype=float)
    n = len(cand)
    if n < 4:
        raise TooFewMatchesError(f"{n} correspondences < 4")

    # one set-level normalization conditions every minimal sample
    cand_n, tc = _hartley_normalization(cand)
    query_n, tq = _hartley_normalization(query)
    tq_inv = np.linalg.inv(tq)

    cand_h = np.column_stack([cand, np.ones(n)])
    query_h = np.column_stack([query, np.ones(n)])

    rng = np.random.default_rng(cfg.rng_seed)
    best_count = 0
    best_mask: np.ndarray | None = None
    best_h: np.ndarray | None = None
    needed = cfg.max_iterations
    done = 0
    thr = cfg.reproj_threshold
    while done < min(cfg.max_iterations, needed):
        m = min(_CHUNK, min(cfg.max_iterations, needed) - done)
        done += m
        # uniform 4-subsets: the 4 smallest entries of a random row
        idx = np.argpartition(rng.random((m, n)), 3, axis=1)[:, :4]
        hn, good = _batched_hypotheses(cand_n, query_n, idx)
        h_all = tq_inv @ hn @ tc
        dets = np.abs(np.linalg.det(h_all))
        good &= dets > 1e-12
        if not np.any(good):
            continue
        h_good = h_all[good]
        hinv = np.linalg.inv(h_good)
        fwd = np.einsum("mij,nj->mni", h_good, cand_h)
        bwd = np.einsum("mij,nj->mni", hinv, query_h)
        with np.errstate(divide="ignore", invalid="ignore"):
            fe = np.hypot(fwd[..., 0] / fwd[..., 2] - query[:, 0],
                          fwd[..., 1] / fwd[..., 2] - query[:, 1])
            be = np.hypot(bwd[..., 0] / bwd[..., 2] - cand[:, 0],
                          bwd[..., 1] / bwd[..., 2] - cand[:, 1])
        err = np.maximum(np.nan_to_num(fe, nan=np.inf), np.nan_to_num(be, nan=np.inf))
        err = np.where(
            (np.abs(fwd[..., 2]) <= 1e-12) | (np.abs(bwd[..., 2]) <= 1e-12), np.inf, err
        )
        masks = err < thr
        counts = masks.sum(axis=1)
        top = int(np.argmax(counts))  # first maximum: deterministic
        if int(counts[top]) > best_count:
            best_count = int(counts[top])
            best_mask = masks[top]
            best_h = h_good[top]
            w = best_count / n
            if w >= 1.0:
                break
            denom = math.log1p(-(w ** 4))
            if denom < 0:
                needed = min(cfg.max_iterations, math.ceil(math.log(1.0 - cfg.confidence) / denom))

    if best_h is None or best_count < 4:
        raise EstimationError("no homography hypothesis reached 4 inliers")

    try:
        h_refit = dlt_homography(cand[best_mask], query[best_mask])
        if abs(np.linalg.det(h_refit)) > 1e-12:
            err = _symmetric_error(h_refit, cand, query)
            mask_refit = err < cfg.reproj_threshold
            if int(mask_refit.sum()) >= best_count:
                best_h, best_mask, best_count = h_refit, mask_refit, int(mask_refit.sum())
    except EstimationError:
        pass

    return FitResult(h=normalize_h(best_h), inlier_mask=best_mask, inlier_count=best_count)
