"""Web Mercator bookkeeping: projection, tile footprints, planar quad tests.

All containment, convexity and area reasoning happens in normalized Web
Mercator coordinates (the whole map is [0,1] x [0,1], y growing southward),
matching the rectilinear tiling of the reference database. Footprints are
small relative to Earth, so no spherical corrections are applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Web Mercator is undefined at the poles; the usual cutoff latitude.
MAX_MERCATOR_LAT = 85.05113

_EDGE_EPS = 1e-12


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DomainError(f"non-finite geographic point ({self.lat}, {self.lon})")
        if abs(self.lat) > 90.0:
            raise DomainError(f"latitude {self.lat} outside [-90, 90]")
        if abs(self.lon) > 180.0:
            raise DomainError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class MercPoint:
    """Normalized Web Mercator coordinates; (0.5, 0.5) is lat=0, lon=0."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite Mercator point ({self.x}, {self.y})")


def to_mercator(p: GeoPoint) -> MercPoint:
    if abs(p.lat) >= MAX_MERCATOR_LAT:
        raise DomainError(
            f"latitude {p.lat} beyond the Web Mercator limit ({MAX_MERCATOR_LAT})"
        )
    x = (p.lon + 180.0) / 360.0
    phi = math.radians(p.lat)
    y = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0
    return MercPoint(x, y)


def from_mercator(m: MercPoint) -> GeoPoint:
    lon = m.x * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * m.y))))
    return GeoPoint(lat, lon)


@dataclass(frozen=True)
class Footprint:
    """Geographic quadrilateral tied to the pixel corners of an image.

    Corners are ordered TL, TR, BR, BL and correspond to pixel coordinates
    (0,0), (W,0), (W,H), (0,H). Footprints crossing the antimeridian are
    rejected rather than silently wrapped.
    """

    corners: tuple[GeoPoint, GeoPoint, GeoPoint, GeoPoint]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise DomainError("footprint needs exactly 4 corners")
        lons = [c.lon for c in self.corners]
        if max(lons) - min(lons) > 180.0:
            raise DomainError("footprint crosses the antimeridian")

    def mercator(self) -> np.ndarray:
        """Corners as a (4,2) array of normalized Mercator (x, y)."""
        pts = [to_mercator(c) for c in self.corners]
        return np.array([[p.x, p.y] for p in pts], dtype=float)

    @staticmethod
    def from_mercator_rect(x0: float, y0: float, x1: float, y1: float) -> "Footprint":
        """Axis-aligned rectangle from Mercator TL (x0,y0) and BR (x1,y1)."""
        tl = from_mercator(MercPoint(x0, y0))
        tr = from_mercator(MercPoint(x1, y0))
        br = from_mercator(MercPoint(x1, y1))
        bl = from_mercator(MercPoint(x0, y1))
        return Footprint(corners=(tl, tr, br, bl))


@dataclass(frozen=True)
class TileGeom:
    """A reference tile: footprint plus pixel dimensions.

    Tile footprints come from a rectilinear Mercator tiling, so they must be
    axis-aligned rectangles in Mercator space.
    """

    footprint: Footprint
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise DomainError("tile pixel dimensions must be positive")
        tl, tr, br, bl = self.footprint.mercator()
        aligned = (
            abs(tl[0] - bl[0]) < 1e-9
            and abs(tr[0] - br[0]) < 1e-9
            and abs(tl[1] - tr[1]) < 1e-9
            and abs(bl[1] - br[1]) < 1e-9
        )
        if not aligned:
            raise DomainError("tile footprint is not an axis-aligned Mercator rectangle")

    def mercator_rect(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the tile in Mercator coordinates."""
        tl, _, br, _ = self.footprint.mercator()
        return float(tl[0]), float(tl[1]), float(br[0]), float(br[1])

    def mercator_area(self) -> float:
        x0, y0, x1, y1 = self.mercator_rect()
        return abs((x1 - x0) * (y1 - y0))


def pixel_to_mercator(tile: TileGeom, pts: np.ndarray) -> np.ndarray:
    """Affine map from tile pixel coordinates to Mercator, (N,2) -> (N,2).

    Pixel (0,0) is the TL footprint corner and (W,H) the BR corner; points
    outside the tile extrapolate (warped footprints extend beyond tiles).
    """
    merc = tile.footprint.mercator()
    tl, tr, _, bl = merc
    ex = tr - tl
    ey = bl - tl
    if np.all(ex == 0.0) or np.all(ey == 0.0):
        raise DomainError("degenerate tile: zero Mercator extent")
    pts = np.asarray(pts, dtype=float)
    fx = pts[:, 0] / tile.width_px
    fy = pts[:, 1] / tile.height_px
    return tl[None, :] + fx[:, None] * ex[None, :] + fy[:, None] * ey[None, :]


def pixel_to_geo(tile: TileGeom, px: tuple[float, float]) -> GeoPoint:
    """Geographic coordinates of one pixel position on a tile."""
    merc = pixel_to_mercator(tile, np.asarray([px], dtype=float))[0]
    return from_mercator(MercPoint(float(merc[0]), float(merc[1])))


def quad_is_convex(q: np.ndarray) -> bool:
    """True iff all consecutive-edge cross products share a strict sign.

    Degenerate (collinear) and self-intersecting orderings return False.
    """
    q = np.asarray(q, dtype=float)
    signs = []
    for i in range(4):
        a = q[(i + 1) % 4] - q[i]
        b = q[(i + 2) % 4] - q[(i + 1) % 4]
        signs.append(a[0] * b[1] - a[1] * b[0])
    signs = np.asarray(signs)
    if np.any(signs == 0.0):
        return False
    return bool(np.all(signs > 0.0) or np.all(signs < 0.0))


def quad_area(q: np.ndarray) -> float:
    """Shoelace area (absolute value) of a simple quadrilateral."""
    q = np.asarray(q, dtype=float)
    x, y = q[:, 0], q[:, 1]
    s = x @ np.roll(y, -1) - y @ np.roll(x, -1)
    return float(abs(s) / 2.0)


def _on_segment(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> bool:
    d = b - a
    length = math.hypot(d[0], d[1])
    if length == 0.0:
        return math.hypot(p[0] - a[0], p[1] - a[1]) <= _EDGE_EPS
    cross = d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])
    if abs(cross) / length > _EDGE_EPS:
        return False
    t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (length * length)
    return -_EDGE_EPS <= t <= 1.0 + _EDGE_EPS


def _properly_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and all(
        d != 0 for d in (d1, d2, d3, d4)
    )


def quad_is_simple(q: np.ndarray) -> bool:
    """True iff no pair of opposite edges crosses (no bowtie)."""
    q = np.asarray(q, dtype=float)
    if _properly_cross(q[0], q[1], q[2], q[3]):
        return False
    if _properly_cross(q[1], q[2], q[3], q[0]):
        return False
    return True


def _point_in_quad(quad: np.ndarray, p: np.ndarray) -> bool:
    for i in range(4):
        if _on_segment(quad[i], quad[(i + 1) % 4], p):
            return True
    # even-odd ray cast, half-open in y so vertices are not double-counted
    inside = False
    x, y = p
    for i in range(4):
        x1, y1 = quad[i]
        x2, y2 = quad[(i + 1) % 4]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def footprint_contains(f: Footprint, p: GeoPoint) -> bool:
    """Boundary-inclusive point-in-footprint test, evaluated in Mercator."""
    quad = f.mercator()
    if not quad_is_simple(quad):
        raise DomainError("self-intersecting footprint")
    m = to_mercator(p)
    return _point_in_quad(quad, np.array([m.x, m.y]))
