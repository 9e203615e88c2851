"""Image handling: IO, grayscale, square resize, perspective warp, mosaics.

Images are numpy float64 arrays in [0,1], shape (H, W) for grayscale or
(H, W, 3) for RGB. Pixel centers sit at integer coordinates and all
resampling is bilinear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from PIL import Image as PILImage

from .errors import DomainError, EstimationError
from .geo import Footprint, TileGeom

# Mosaic block order: row-major around the center tile.
NEIGHBOR_KEYS = ("NW", "N", "NE", "W", "E", "SW", "S", "SE")

_NEIGHBOR_GRID = {
    "NW": (0, 0), "N": (0, 1), "NE": (0, 2),
    "W": (1, 0), "E": (1, 2),
    "SW": (2, 0), "S": (2, 1), "SE": (2, 2),
}

_LUMA = np.array([0.299, 0.587, 0.114])


def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to an RGB array in [0,1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Write an image as 8-bit PNG or JPEG (by extension)."""
    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    PILImage.fromarray(data, mode=mode).save(path)


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return img @ _LUMA


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray, fill=None) -> np.ndarray:
    """Sample img at float coordinates. fill=None clamps at edges,
    otherwise out-of-image samples take the fill value."""
    h, w = img.shape[:2]
    if fill is None:
        xq = np.clip(x, 0.0, w - 1.0)
        yq = np.clip(y, 0.0, h - 1.0)
        valid = None
    else:
        valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
        xq = np.clip(x, 0.0, w - 1.0)
        yq = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xq).astype(np.intp)
    y0 = np.floor(yq).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xq - x0
    fy = yq - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    if valid is not None:
        if img.ndim == 3:
            out = np.where(valid[..., None], out, fill)
        else:
            out = np.where(valid, out, fill)
    return out


def _resample(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h_out, w_out = out_hw
    h, w = img.shape[:2]
    if (h_out, w_out) == (h, w):
        return img.copy()
    # half-pixel-center convention: output pixel i samples (i+0.5)*scale - 0.5
    ys = (np.arange(h_out) + 0.5) * (h / h_out) - 0.5
    xs = (np.arange(w_out) + 0.5) * (w / w_out) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.clip(_bilinear(img, gx, gy, fill=None), 0.0, 1.0)


def resize_square(img: np.ndarray, side: int) -> np.ndarray:
    """Naive anisotropic resize to side x side (no padding/cropping)."""
    if side < 1:
        raise DomainError("resize side must be >= 1")
    return _resample(img, (side, side))


def warp_perspective(src: np.ndarray, h: np.ndarray, dst_size: tuple[int, int]) -> np.ndarray:
    """Warp src into a (W,H) canvas through a homography mapping src -> dst.

    Inverse warping: every destination pixel samples the source at
    h^-1 * p with bilinear interpolation; samples outside the source
    fill with black.
    """
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.det(h)) <= 1e-12:
        raise EstimationError("singular homography")
    w_out, h_out = dst_size
    hinv = np.linalg.inv(h)
    xs, ys = np.meshgrid(np.arange(w_out, dtype=float), np.arange(h_out, dtype=float))
    denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    finite = np.abs(denom) > 1e-12
    denom = np.where(finite, denom, 1.0)
    u = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom
    v = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom
    u = np.where(finite, u, -1.0)  # behind-camera pixels fall to fill
    v = np.where(finite, v, -1.0)
    out = _bilinear(src, u, v, fill=0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class Mosaic:
    """A candidate tile surrounded by its 8 neighbors in one 3x3 image."""

    image: np.ndarray
    center_offset: tuple[int, int]  # (W, H): translation center frame -> mosaic frame
    geom: TileGeom


def build_mosaic(
    center_image: np.ndarray,
    center_geom: TileGeom,
    neighbors: Mapping[str, np.ndarray] | None = None,
) -> Mosaic:
    """Assemble the 3x3 surroundings image around a center tile.

    Missing neighbors (e.g. ocean tiles absent from the database) stay
    black. The output geometry extends the center footprint one tile
    extent in every Mercator direction.
    """
    neighbors = neighbors or {}
    h, w = center_image.shape[:2]
    shape = (3 * h, 3 * w) + center_image.shape[2:]
    canvas = np.zeros(shape, dtype=center_image.dtype)
    canvas[h:2 * h, w:2 * w] = center_image
    for key, img in neighbors.items():
        if key not in _NEIGHBOR_GRID:
            raise DomainError(f"unknown neighbor key {key!r}")
        if img is None:
            continue
        if img.shape != center_image.shape:
            raise DomainError(
                f"neighbor {key} shape {img.shape} != center shape {center_image.shape}"
            )
        r, c = _NEIGHBOR_GRID[key]
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = img

    x0, y0, x1, y1 = center_geom.mercator_rect()
    dx, dy = x1 - x0, y1 - y0
    footprint = Footprint.from_mercator_rect(x0 - dx, y0 - dy, x1 + dx, y1 + dy)
    geom = TileGeom(footprint=footprint, width_px=3 * w, height_px=3 * h)
    return Mosaic(image=canvas, center_offset=(w, h), geom=geom)
