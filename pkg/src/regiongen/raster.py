"""Obstacle-aware road map segmentation on binary rasters.

Pipeline: rasterize roads and obstacles, dilate the road raster, thin it to
a one-pixel skeleton, fuse with the obstacle raster, label the background
with 4-connectivity and trace every label back into a polygon.

Raster convention: row 0 is the northern edge. Pixel (r, c) covers
lon in [lon0 + c*dlon, lon0 + (c+1)*dlon] and
lat in [lat0 - (r+1)*dlat, lat0 - r*dlat].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import shapely
from scipy import ndimage

from .geometry import KM_PER_DEG, Polygon

MIN_RESOLUTION = 16


class EmptyGeometry(ValueError):
    pass


class ResolutionTooLow(ValueError):
    pass


class EvenKernel(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GeoTransform:
    lon0: float
    lat0: float
    dlon: float
    dlat: float

    def __post_init__(self):
        if not (self.dlon > 0 and self.dlat > 0):
            raise ValueError("pixel steps must be positive")

    def pixel_size_m(self, row: float = 0.0) -> tuple[float, float]:
        """(width, height) of one pixel in metres at the given row."""
        lat = self.lat0 - (row + 0.5) * self.dlat
        w = self.dlon * KM_PER_DEG * 1000.0 * math.cos(math.radians(lat))
        return w, self.dlat * KM_PER_DEG * 1000.0

    def to_pixel(self, lon, lat):
        """Fractional (col, row) coordinates."""
        col = (np.asarray(lon, dtype=float) - self.lon0) / self.dlon
        row = (self.lat0 - np.asarray(lat, dtype=float)) / self.dlat
        return col, row

    def to_lonlat(self, col, row):
        col = np.asarray(col, dtype=float)
        row = np.asarray(row, dtype=float)
        return self.lon0 + col * self.dlon, self.lat0 - row * self.dlat

    @classmethod
    def from_bbox(cls, bbox, width: int, height: int) -> "GeoTransform":
        min_lon, min_lat, max_lon, max_lat = bbox
        return cls(min_lon, max_lat, (max_lon - min_lon) / width, (max_lat - min_lat) / height)


@dataclass
class RasterGrid:
    pixels: np.ndarray
    transform: GeoTransform

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("raster must be 2-D")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class LabeledRaster:
    labels: np.ndarray
    component_count: int
    transform: GeoTransform


def raster_shape(bbox, resolution) -> tuple[int, int]:
    """(width, height) for a bounding box.

    An int sets the pixel count of the longer axis; the other axis is scaled
    so pixels are close to square on the ground. A pair is taken verbatim.
    """
    if isinstance(resolution, (tuple, list)):
        w, h = int(resolution[0]), int(resolution[1])
    else:
        min_lon, min_lat, max_lon, max_lat = bbox
        lat_mid = (min_lat + max_lat) / 2
        wx = (max_lon - min_lon) * math.cos(math.radians(lat_mid))
        hy = max_lat - min_lat
        n = int(resolution)
        if wx >= hy:
            w, h = n, max(1, round(n * hy / wx)) if wx > 0 else n
        else:
            w, h = max(1, round(n * wx / hy)), n
    if min(w, h) < MIN_RESOLUTION:
        raise ResolutionTooLow(f"raster {w}x{h} is below {MIN_RESOLUTION} pixels per axis")
    return w, h


def bresenham(c0: int, r0: int, c1: int, r1: int):
    """Integer pixels on the line from (c0, r0) to (c1, r1), endpoints included."""
    cols, rows = [], []
    dc = abs(c1 - c0)
    dr = -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    c, r = c0, r0
    while True:
        cols.append(c)
        rows.append(r)
        if c == c1 and r == r1:
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
    return np.array(rows), np.array(cols)


def draw_polyline(pixels: np.ndarray, cols, rows) -> None:
    """Burn a polyline given in fractional pixel coordinates into ``pixels``."""
    h, w = pixels.shape
    ci = np.clip(np.floor(np.asarray(cols)).astype(int), 0, w - 1)
    ri = np.clip(np.floor(np.asarray(rows)).astype(int), 0, h - 1)
    if len(ci) == 1:
        pixels[ri[0], ci[0]] = 1
    for k in range(len(ci) - 1):
        rr, cc = bresenham(int(ci[k]), int(ri[k]), int(ci[k + 1]), int(ri[k + 1]))
        pixels[rr, cc] = 1


def _supercover(pixels: np.ndarray, c0, r0, c1, r1) -> None:
    """Mark every pixel the segment passes through (fractional coordinates)."""
    h, w = pixels.shape
    n = int(max(abs(c1 - c0), abs(r1 - r0)) * 4) + 2
    t = np.linspace(0.0, 1.0, n)
    cc = np.clip(np.floor(c0 + t * (c1 - c0)).astype(int), 0, w - 1)
    rr = np.clip(np.floor(r0 + t * (r1 - r0)).astype(int), 0, h - 1)
    pixels[rr, cc] = 1


def _burn_polygon(pixels: np.ndarray, poly: Polygon, tf: GeoTransform) -> None:
    h, w = pixels.shape
    sp = shapely.Polygon(poly.exterior, poly.holes)
    min_lon, min_lat, max_lon, max_lat = poly.bounds
    c_lo, r_hi = tf.to_pixel(min_lon, min_lat)
    c_hi, r_lo = tf.to_pixel(max_lon, max_lat)
    c_lo, c_hi = max(0, int(math.floor(c_lo))), min(w - 1, int(math.floor(c_hi)))
    r_lo, r_hi = max(0, int(math.floor(r_lo))), min(h - 1, int(math.floor(r_hi)))
    if c_lo <= c_hi and r_lo <= r_hi:
        rr, cc = np.mgrid[r_lo : r_hi + 1, c_lo : c_hi + 1]
        lon, lat = tf.to_lonlat(cc + 0.5, rr + 0.5)
        inside = shapely.contains_xy(sp, lon, lat)
        pixels[rr[inside], cc[inside]] = 1
    for ring in poly.rings:
        col, row = tf.to_pixel(ring[:, 0], ring[:, 1])
        for k in range(len(ring) - 1):
            _supercover(pixels, col[k], row[k], col[k + 1], row[k + 1])


def rasterize(roads: Sequence, obstacles: Sequence[Polygon], resolution, bbox=None):
    """Burn roads (Bresenham) and obstacles (any-overlap) into two binary rasters.

    ``roads`` is a list of polylines, each an (n, 2) array of (lon, lat).
    ``bbox`` defaults to the extent of all inputs.
    """
    roads = [np.asarray(r, dtype=float) for r in roads]
    if not roads and not obstacles:
        raise EmptyGeometry("no roads or obstacles to rasterize")
    if bbox is None:
        pts = [r for r in roads] + [o.exterior for o in obstacles]
        allp = np.concatenate(pts)
        bbox = (allp[:, 0].min(), allp[:, 1].min(), allp[:, 0].max(), allp[:, 1].max())
    if not (bbox[2] > bbox[0] and bbox[3] > bbox[1]):
        raise EmptyGeometry("geometry has zero extent")
    w, h = raster_shape(bbox, resolution)
    tf = GeoTransform.from_bbox(bbox, w, h)
    road_px = np.zeros((h, w), dtype=np.uint8)
    for line in roads:
        col, row = tf.to_pixel(line[:, 0], line[:, 1])
        draw_polyline(road_px, col, row)
    obs_px = np.zeros((h, w), dtype=np.uint8)
    for ob in obstacles:
        _burn_polygon(obs_px, ob, tf)
    return RasterGrid(road_px, tf), RasterGrid(obs_px, tf)


def _check_kernel(kernel: int) -> None:
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"kernel must be odd and >= 1, got {kernel}")


def dilate_array(px: np.ndarray, kernel: int) -> np.ndarray:
    _check_kernel(kernel)
    r = kernel // 2
    src = px.astype(bool)
    h, w = src.shape
    # square structuring element is separable: rows then columns
    tmp = np.zeros_like(src)
    for d in range(-r, r + 1):
        if d >= 0:
            tmp[:, : w - d] |= src[:, d:] if d else src
        else:
            tmp[:, -d:] |= src[:, : w + d]
    out = np.zeros_like(src)
    for d in range(-r, r + 1):
        if d >= 0:
            out[: h - d, :] |= tmp[d:, :] if d else tmp
        else:
            out[-d:, :] |= tmp[: h + d, :]
    return out.astype(np.uint8)


def dilate(r: RasterGrid, kernel: int = 5) -> RasterGrid:
    """k x k square dilation; pixels beyond the border count as background."""
    return RasterGrid(dilate_array(r.pixels, kernel), r.transform)


def _neighbours(img: np.ndarray):
    """P2..P9 of every pixel (N, NE, E, SE, S, SW, W, NW) over a zero border."""
    p = np.pad(img, 1)
    h, w = img.shape
    return [
        p[0:h, 1 : w + 1],
        p[0:h, 2 : w + 2],
        p[1 : h + 1, 2 : w + 2],
        p[2 : h + 2, 2 : w + 2],
        p[2 : h + 2, 1 : w + 1],
        p[2 : h + 2, 0:w],
        p[1 : h + 1, 0:w],
        p[0:h, 0:w],
    ]


def _zs_candidates(img: np.ndarray, step: int) -> np.ndarray:
    n = _neighbours(img)
    p2, p3, p4, p5, p6, p7, p8, p9 = n
    b = sum(x.astype(np.int8) for x in n)
    seq = n + [p2]
    a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int8) for i in range(8))
    cand = (img == 1) & (b >= 2) & (b <= 6) & (a == 1)
    if step == 0:
        cand &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        cand &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return cand


def _zs_pixel_ok(img: np.ndarray, r: int, c: int, step: int) -> bool:
    h, w = img.shape

    def at(rr, cc):
        return int(img[rr, cc]) if 0 <= rr < h and 0 <= cc < w else 0

    p2, p3, p4, p5 = at(r - 1, c), at(r - 1, c + 1), at(r, c + 1), at(r + 1, c + 1)
    p6, p7, p8, p9 = at(r + 1, c), at(r + 1, c - 1), at(r, c - 1), at(r - 1, c - 1)
    n = [p2, p3, p4, p5, p6, p7, p8, p9]
    b = sum(n)
    if not 2 <= b <= 6:
        return False
    a = sum(1 for i in range(8) if n[i] == 0 and n[(i + 1) % 8] == 1)
    if a != 1:
        return False
    if step == 0:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def thin_array(px: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning with topology-safe deletion.

    Each sub-iteration collects the classic Zhang-Suen candidates in
    parallel. Candidates with no other candidate in their 8-neighbourhood
    are deleted as in the parallel algorithm; clustered candidates are
    re-checked in raster order against the partially updated image, which
    stops 2x2 blocks and two-pixel diagonals from vanishing.
    """
    img = (np.asarray(px) != 0).astype(np.uint8)
    h, w = img.shape
    while True:
        changed = False
        for step in (0, 1):
            cand = _zs_candidates(img, step)
            if not cand.any():
                continue
            ci = cand.astype(np.uint8)
            crowd = sum(x.astype(np.int8) for x in _neighbours(ci))
            lone = cand & (crowd == 0)
            img[lone] = 0
            rows, cols = np.nonzero(cand & ~lone)
            for r, c in zip(rows.tolist(), cols.tolist()):
                if _zs_pixel_ok(img, r, c, step):
                    img[r, c] = 0
            changed = True
        if not changed:
            break
    return img


def thin(r: RasterGrid) -> RasterGrid:
    return RasterGrid(thin_array(r.pixels), r.transform)


_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def label_background(boundary: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labels of the zero pixels, numbered in raster-scan order."""
    labels, n = ndimage.label(np.asarray(boundary) == 0, structure=_FOUR)
    return labels.astype(np.int32), int(n)


def fuse_and_label(skeleton: RasterGrid, obstacle_raster: RasterGrid) -> LabeledRaster:
    if skeleton.pixels.shape != obstacle_raster.pixels.shape:
        raise DimensionMismatch(
            f"skeleton {skeleton.pixels.shape} vs obstacles {obstacle_raster.pixels.shape}"
        )
    boundary = (skeleton.pixels != 0) | (obstacle_raster.pixels != 0)
    labels, n = label_background(boundary)
    return LabeledRaster(labels, n, skeleton.transform)


# --- vectorisation ---------------------------------------------------------

# unit direction vectors in (x=col, y=row) with y pointing down
_DIRS = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}


def _trace_rings(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed pixel-edge rings around the True cells of ``mask``.

    Directed edges keep the component on their right (y down). At a vertex
    where two cells of the component touch diagonally the walk turns left,
    joining the diagonal cells so the outer ring stays simple and any
    enclosed gap becomes a hole touching it at that vertex.
    """
    m = np.pad(mask.astype(bool), 1)
    out = {}
    inner = m[1:-1, 1:-1]
    h, w = inner.shape
    # edges indexed by their start vertex (x, y) in the unpadded frame
    rr, cc = np.nonzero(inner & ~m[0:-2, 1:-1])  # top
    for r, c in zip(rr.tolist(), cc.tolist()):
        out.setdefault((c, r), []).append((c + 1, r))
    rr, cc = np.nonzero(inner & ~m[1:-1, 2:])  # right
    for r, c in zip(rr.tolist(), cc.tolist()):
        out.setdefault((c + 1, r), []).append((c + 1, r + 1))
    rr, cc = np.nonzero(inner & ~m[2:, 1:-1])  # bottom
    for r, c in zip(rr.tolist(), cc.tolist()):
        out.setdefault((c + 1, r + 1), []).append((c, r + 1))
    rr, cc = np.nonzero(inner & ~m[1:-1, 0:-2])  # left
    for r, c in zip(rr.tolist(), cc.tolist()):
        out.setdefault((c, r + 1), []).append((c, r))

    used = set()
    rings = []
    for start in sorted(out):
        for end in out[start]:
            if (start, end) in used:
                continue
            ring = [start]
            prev, cur = start, end
            used.add((start, end))
            while True:
                ring.append(cur)
                succ = out[cur]
                if len(succ) == 1:
                    nxt = succ[0]
                else:
                    dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                    # left turn in y-down coordinates: (dx, dy) -> (dy, -dx)
                    left = (cur[0] + dy, cur[1] - dx)
                    nxt = left if left in succ else succ[0]
                if (cur, nxt) in used:
                    break
                used.add((cur, nxt))
                prev, cur = cur, nxt
            rings.append(ring)
    return rings


def _simplify(ring: list) -> list:
    """Drop collinear vertices from a closed axis-aligned ring."""
    pts = ring[:-1]
    n = len(pts)
    keep = []
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(b)
    keep.append(keep[0])
    return keep


def _ring_area_px(ring) -> float:
    a = 0.0
    for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
        a += x0 * y1 - x1 * y0
    return a / 2.0


def vectorize(lr: LabeledRaster, transform: GeoTransform | None = None) -> list[tuple[int, Polygon]]:
    """Trace each labelled component into a polygon with holes."""
    tf = transform or lr.transform
    labels = lr.labels
    objects = ndimage.find_objects(labels)
    result = []
    for k, sl in enumerate(objects, start=1):
        if sl is None:
            continue
        r0, c0 = sl[0].start, sl[1].start
        mask = labels[sl] == k
        rings = [_simplify(r) for r in _trace_rings(mask)]
        # with y down, a positive shoelace area is clockwise on the map
        areas = [_ring_area_px(r) for r in rings]
        ext_i = int(np.argmax(areas))
        coords = []
        for r in rings:
            xy = np.array(r, dtype=float)
            lon, lat = tf.to_lonlat(xy[:, 0] + c0, xy[:, 1] + r0)
            coords.append(np.column_stack([lon, lat]))
        # flipping y reverses orientation: exterior counter-clockwise, holes clockwise
        exterior = coords[ext_i][::-1]
        holes = [coords[i][::-1] for i in range(len(rings)) if i != ext_i]
        result.append((k, Polygon(exterior, holes, validate=False)))
    return result


def component_sizes(lr: LabeledRaster) -> np.ndarray:
    return np.bincount(lr.labels.ravel(), minlength=lr.component_count + 1)[1:]


def frame(shape, width: int) -> np.ndarray:
    """Mask of the outermost ``width`` pixels of a raster."""
    m = np.zeros(shape, dtype=np.uint8)
    if width > 0:
        m[:width, :] = m[-width:, :] = 1
        m[:, :width] = m[:, -width:] = 1
    return m


def segment(roads, obstacles, resolution, kernel: int = 5, bbox=None):
    """Full raster pipeline; returns (labelled raster, [(id, Polygon)]).

    Roads on the raster edge thin to a line just inside it, so the outer
    kernel//2 pixels are treated as boundary to avoid a sliver ring element.
    """
    road_r, obs_r = rasterize(roads, obstacles, resolution, bbox=bbox)
    skel = thin(dilate(road_r, kernel))
    skel = RasterGrid(skel.pixels | frame(skel.pixels.shape, kernel // 2), skel.transform)
    lr = fuse_and_label(skel, obs_r)
    return lr, vectorize(lr)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary P5 greyscale dump; nonzero pixels map to 255 for binary rasters."""
    a = np.asarray(pixels)
    if a.max(initial=0) <= 1:
        img = (a != 0).astype(np.uint8) * 255
    else:
        img = (a % 256).astype(np.uint8)
    h, w = img.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
