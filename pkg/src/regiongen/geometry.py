"""Planar geometry on small lon/lat extents, plus geohash encoding.

Distances and areas use a local equirectangular projection: one degree of
latitude is 111.32 km and one degree of longitude is 111.32 km times the
cosine of the anchor latitude. City-scale extents keep the error well
below the decision thresholds used downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KM_PER_DEG = 111.32
M_PER_DEG = KM_PER_DEG * 1000.0

GEOHASH_ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
_GEOHASH_INDEX = {c: i for i, c in enumerate(GEOHASH_ALPHABET)}


class InvalidRing(ValueError):
    """Raised for rings that are open, too short, or self-crossing."""


@dataclass(frozen=True)
class Point:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"point out of range: lon={self.lon}, lat={self.lat}")


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidRing("ring must be a sequence of (lon, lat) pairs")
    if len(ring) < 4:
        raise InvalidRing(f"ring has {len(ring)} vertices, need at least 4")
    if not np.array_equal(ring[0], ring[-1]):
        raise InvalidRing("ring is not closed")
    return ring


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper crossing test: interiors intersect at a single point."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _check_simple(ring: np.ndarray) -> None:
    # Proper crossings only; rings produced from pixel boundaries may touch
    # themselves at isolated vertices.
    n = len(ring) - 1
    for i in range(n):
        a, b = ring[i], ring[i + 1]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, ring[j], ring[j + 1]):
                raise InvalidRing(f"ring self-intersects between edges {i} and {j}")


@dataclass(frozen=True, eq=False)
class Polygon:
    """Polygon with an exterior ring and optional holes, coordinates (lon, lat).

    Rings are validated on construction: closed, at least four vertices and
    free of proper self-crossings.
    """

    exterior: np.ndarray
    holes: tuple = field(default_factory=tuple)

    def __init__(self, exterior, holes=(), *, validate: bool = True):
        ext = _as_ring(exterior)
        hs = tuple(_as_ring(h) for h in holes)
        if validate:
            _check_simple(ext)
            for h in hs:
                _check_simple(h)
        ext.setflags(write=False)
        for h in hs:
            h.setflags(write=False)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", hs)

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.exterior, *self.holes]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_lon, min_lat, max_lon, max_lat) of the exterior ring."""
        lo = self.exterior.min(axis=0)
        hi = self.exterior.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def centroid(self) -> tuple[float, float]:
        return ring_centroid(self.exterior)

    def to_geojson(self) -> list:
        return [r.tolist() for r in self.rings]

    @classmethod
    def from_geojson(cls, coords, validate: bool = True) -> "Polygon":
        return cls(coords[0], coords[1:], validate=validate)

    @classmethod
    def box(cls, min_lon, min_lat, max_lon, max_lat) -> "Polygon":
        return cls(
            [
                (min_lon, min_lat),
                (max_lon, min_lat),
                (max_lon, max_lat),
                (min_lon, max_lat),
                (min_lon, min_lat),
            ],
            validate=False,
        )

    def __eq__(self, other):
        if not isinstance(other, Polygon):
            return NotImplemented
        if len(self.holes) != len(other.holes):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.rings, other.rings))

    def __hash__(self):
        return hash(tuple(r.tobytes() for r in self.rings))


def ring_centroid(ring: np.ndarray) -> tuple[float, float]:
    """Area-weighted centroid in degree space; vertex mean for degenerate rings."""
    x, y = ring[:-1, 0], ring[:-1, 1]
    x1, y1 = ring[1:, 0], ring[1:, 1]
    # shift to the first vertex to limit cancellation
    ox, oy = x[0], y[0]
    xs, ys, x1s, y1s = x - ox, y - oy, x1 - ox, y1 - oy
    cross = xs * y1s - x1s * ys
    a = cross.sum() / 2.0
    if abs(a) < 1e-18:
        return float(x.mean()), float(y.mean())
    cx = ((xs + x1s) * cross).sum() / (6.0 * a) + ox
    cy = ((ys + y1s) * cross).sum() / (6.0 * a) + oy
    return float(cx), float(cy)


def project(coords, lon0: float, lat0: float) -> np.ndarray:
    """Local equirectangular projection to kilometres around (lon0, lat0)."""
    c = np.asarray(coords, dtype=float)
    out = np.empty_like(c)
    out[..., 0] = (c[..., 0] - lon0) * KM_PER_DEG * math.cos(math.radians(lat0))
    out[..., 1] = (c[..., 1] - lat0) * KM_PER_DEG
    return out


def _shoelace(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def polygon_area_km2(p: Polygon) -> float:
    lon0, lat0 = p.centroid()
    area = abs(_shoelace(project(p.exterior, lon0, lat0)))
    for h in p.holes:
        area -= abs(_shoelace(project(h, lon0, lat0)))
    return max(area, 0.0)


# --- geohash -------------------------------------------------------------


def geohash_encode(lat: float, lon: float, precision: int = 8) -> str:
    """Standard geohash: interleave longitude/latitude bisection bits, lon first."""
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    nbits = 0
    even = True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        nbits += 1
        if nbits == 5:
            chars.append(GEOHASH_ALPHABET[bits])
            bits = 0
            nbits = 0
    return "".join(chars)


def geohash_decode(code: str) -> tuple[float, float, float, float]:
    """Return the cell bounds (min_lat, min_lon, max_lat, max_lon)."""
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        try:
            v = _GEOHASH_INDEX[c]
        except KeyError:
            raise ValueError(f"invalid geohash character {c!r}") from None
        for shift in range(4, -1, -1):
            bit = (v >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return lat_lo, lon_lo, lat_hi, lon_hi


def geohash_cell_size(precision: int = 8) -> tuple[float, float]:
    """(lat_step, lon_step) in degrees of a geohash cell at this precision."""
    total = 5 * precision
    lon_bits = (total + 1) // 2
    lat_bits = total // 2
    return 180.0 / 2**lat_bits, 360.0 / 2**lon_bits


def geohash_cell_index(lat, lon, precision: int = 8):
    """Integer (row, col) lattice index of the geohash cell holding each point.

    Vectorised equivalent of ``geohash_encode`` for bulk counting: two points
    share a code iff they share an index.
    """
    dlat, dlon = geohash_cell_size(precision)
    n_lat = round(180.0 / dlat)
    n_lon = round(360.0 / dlon)
    iy = np.floor((np.asarray(lat, dtype=float) + 90.0) / dlat).astype(np.int64)
    ix = np.floor((np.asarray(lon, dtype=float) + 180.0) / dlon).astype(np.int64)
    return np.clip(iy, 0, n_lat - 1), np.clip(ix, 0, n_lon - 1)


# --- distances -------------------------------------------------------------


def _edges(p: Polygon, lon0: float, lat0: float) -> np.ndarray:
    """All boundary segments projected to metres, shape (k, 2, 2)."""
    segs = []
    for r in p.rings:
        xy = project(r, lon0, lat0) * 1000.0
        segs.append(np.stack([xy[:-1], xy[1:]], axis=1))
    return np.concatenate(segs, axis=0)


def _point_segment(points: np.ndarray, segs: np.ndarray):
    """Distances and closest points from each point to each segment.

    points (n, 2), segs (k, 2, 2) -> dist (n, k), closest (n, k, 2).
    """
    a = segs[None, :, 0, :]
    b = segs[None, :, 1, :]
    p = points[:, None, :]
    ab = b - a
    denom = (ab * ab).sum(-1)
    t = np.where(denom > 0, ((p - a) * ab).sum(-1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    c = a + t[..., None] * ab
    d = np.sqrt(((p - c) ** 2).sum(-1))
    return d, c


def _segments_intersect_any(sa: np.ndarray, sb: np.ndarray) -> bool:
    """Closed segment intersection between any pair of the two segment sets."""
    p1 = sa[:, None, 0, :]
    p2 = sa[:, None, 1, :]
    q1 = sb[None, :, 0, :]
    q2 = sb[None, :, 1, :]

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
            c[..., 0] - a[..., 0]
        )

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    return bool(proper.any())


def _point_in_ring(x: float, y: float, ring: np.ndarray) -> bool:
    xs, ys = ring[:-1, 0], ring[:-1, 1]
    xe, ye = ring[1:, 0], ring[1:, 1]
    straddle = (ys > y) != (ye > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = xs + (y - ys) * (xe - xs) / (ye - ys)
    return bool(np.count_nonzero(straddle & (x < xc)) % 2)


def point_in_polygon_xy(x: float, y: float, rings: Sequence[np.ndarray]) -> bool:
    """Even-odd test against projected rings (exterior first). Boundary undefined."""
    if not _point_in_ring(x, y, rings[0]):
        return False
    return not any(_point_in_ring(x, y, h) for h in rings[1:])


def _closest_pair(a: Polygon, b: Polygon):
    """Minimum boundary distance (m) and the closest point pair in local metres.

    Ties between equally close pairs resolve to the pair whose midpoint is
    nearest the midpoint of the two centroids, which keeps the connecting
    segment away from the ends of long parallel edges.
    """
    ca, cb = a.centroid(), b.centroid()
    lon0 = (ca[0] + cb[0]) / 2
    lat0 = (ca[1] + cb[1]) / 2
    ea = _edges(a, lon0, lat0)
    eb = _edges(b, lon0, lat0)
    ra = [project(r, lon0, lat0) * 1000.0 for r in a.rings]
    rb = [project(r, lon0, lat0) * 1000.0 for r in b.rings]
    frame = (lon0, lat0)

    if _segments_intersect_any(ea, eb):
        return 0.0, None, frame
    va = ra[0][0]
    vb = rb[0][0]
    if point_in_polygon_xy(va[0], va[1], rb) or point_in_polygon_xy(vb[0], vb[1], ra):
        return 0.0, None, frame

    # vertices of a against edges of b, and vice versa
    pa = ea[:, 0, :]
    pb = eb[:, 0, :]
    d_ab, c_ab = _point_segment(pa, eb)
    d_ba, c_ba = _point_segment(pb, ea)
    best = min(float(d_ab.min()), float(d_ba.min()))
    tol = 1e-6 + 1e-9 * best
    cand = []
    for i, j in zip(*np.nonzero(d_ab <= best + tol)):
        cand.append((pa[i], c_ab[i, j]))
    for i, j in zip(*np.nonzero(d_ba <= best + tol)):
        cand.append((c_ba[i, j], pb[i]))
    cmid = (project(np.array(ca), lon0, lat0) + project(np.array(cb), lon0, lat0)) * 500.0
    pair = min(cand, key=lambda pq: (float(np.hypot(*((pq[0] + pq[1]) / 2 - cmid))), tuple(pq[0]), tuple(pq[1])))
    return best, pair, frame


def min_distance_m(a: Polygon, b: Polygon) -> float:
    """Shortest distance in metres between the two polygons; 0 if they meet."""
    d, _, _ = _closest_pair(a, b)
    return d


def _segment_hits_polygon(p: np.ndarray, q: np.ndarray, obstacle: Polygon, lon0: float, lat0: float) -> bool:
    rings = [project(r, lon0, lat0) * 1000.0 for r in obstacle.rings]
    if point_in_polygon_xy(p[0], p[1], rings) or point_in_polygon_xy(q[0], q[1], rings):
        return True
    seg = np.array([[p, q]])
    edges = np.concatenate([np.stack([r[:-1], r[1:]], axis=1) for r in rings])
    if _segments_intersect_any(seg, edges):
        return True
    # touching the boundary counts as hitting it
    dist, _ = _point_segment(np.array([p, q]), edges)
    if dist.min() < 1e-9:
        return True
    back, _ = _point_segment(edges[:, 0, :], seg)
    return bool(back.min() < 1e-9)


def segment_crosses(a: Polygon, b: Polygon, obstacles: Sequence[Polygon]) -> bool:
    """Whether the shortest segment joining ``a`` and ``b`` meets any obstacle."""
    if not obstacles:
        return False
    d, pair, (lon0, lat0) = _closest_pair(a, b)
    if pair is None:
        # overlapping polygons: test a shared point
        ea = _edges(a, lon0, lat0)
        eb = _edges(b, lon0, lat0)
        dd, cc = _point_segment(ea[:, 0, :], eb)
        i, j = np.unravel_index(np.argmin(dd), dd.shape)
        p = q = cc[i, j]
    else:
        p, q = pair
    sx0, sy0 = min(p[0], q[0]), min(p[1], q[1])
    sx1, sy1 = max(p[0], q[0]), max(p[1], q[1])
    for ob in obstacles:
        o = project(ob.exterior, lon0, lat0) * 1000.0
        if o[:, 0].max() < sx0 or o[:, 0].min() > sx1 or o[:, 1].max() < sy0 or o[:, 1].min() > sy1:
            continue
        if _segment_hits_polygon(p, q, ob, lon0, lat0):
            return True
    return False


def bbox_distance_m(a: tuple, b: tuple) -> float:
    """Lower bound on polygon distance from (min_lon, min_lat, max_lon, max_lat) boxes."""
    lat0 = (a[1] + a[3] + b[1] + b[3]) / 4
    dx = max(0.0, a[0] - b[2], b[0] - a[2]) * M_PER_DEG * math.cos(math.radians(lat0))
    dy = max(0.0, a[1] - b[3], b[1] - a[3]) * M_PER_DEG
    return math.hypot(dx, dy)
