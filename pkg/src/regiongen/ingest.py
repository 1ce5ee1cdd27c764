"""Service records, geometry input, configuration and demand binning."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import shapely
import tomli

from .geometry import Point, Polygon

log = logging.getLogger(__name__)


class FileUnreadable(OSError):
    pass


class AllRowsMalformed(ValueError):
    pass


class InvalidJson(ValueError):
    pass


class NoRoads(ValueError):
    pass


class EmptyTimeRange(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceRecord:
    timestamp: float  # seconds since the Unix epoch, UTC
    location: Point


@dataclass
class RecordTable:
    """Columnar records: epoch seconds, latitude, longitude."""

    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    malformed: int = 0
    out_of_bounds: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)

    def records(self) -> list[ServiceRecord]:
        return [ServiceRecord(float(t), Point(float(lo), float(la))) for t, la, lo in zip(self.t, self.lat, self.lon)]

    @classmethod
    def from_records(cls, records: Sequence[ServiceRecord]) -> "RecordTable":
        return cls(
            np.array([r.timestamp for r in records], dtype=float),
            np.array([r.location.lat for r in records], dtype=float),
            np.array([r.location.lon for r in records], dtype=float),
        )

    def where(self, mask) -> "RecordTable":
        return RecordTable(self.t[mask], self.lat[mask], self.lon[mask])


@dataclass(frozen=True)
class PipelineConfig:
    interval_s: int = 3600
    alpha: float = 0.1
    tau_m: float = 50.0
    max_area: float = 5.0
    kernel: int = 5
    resolution: int = 512
    w: float = 0.7
    lam: float = 0.7
    eps: int = 10_000
    lag: int = 24
    seed: int = 0
    acf_threshold: float = 0.5
    imbalance: float = 0.05
    init_seeds: int = 3
    geohash_precision: int = 8
    min_daily_demand: float = 1.0
    t0: str = ""
    t_end: str = ""
    bbox: tuple | None = None  # min_lon, min_lat, max_lon, max_lat

    def __post_init__(self):
        for name in ("alpha",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("tau_m", "max_area", "kernel", "resolution", "eps", "lag", "acf_threshold", "interval_s", "init_seeds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if 86400 % self.interval_s:
            raise ConfigError("interval_s must divide a day")
        if not 0 <= self.w <= 1 or not 0 <= self.lam <= 1:
            raise ConfigError("w and lam must be in [0, 1]")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")
        if self.bbox is not None and len(self.bbox) != 4:
            raise ConfigError("bbox needs four numbers")

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None


_ALIASES = {"interval": "interval_s", "L": "max_area", "lambda": "lam", "Eps": "eps", "max_epochs": "eps"}


def load_config(path) -> PipelineConfig:
    """Read a flat TOML file whose keys mirror PipelineConfig fields."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as e:
        raise FileUnreadable(str(e)) from e
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> PipelineConfig:
    known = {f.name: f for f in fields(PipelineConfig)}
    kw = {}
    for key, val in raw.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, dict):
            raise ConfigError(f"config must be flat; {key!r} is a table")
        if name == "bbox":
            val = tuple(float(x) for x in val)
        kw[name] = val
    return PipelineConfig(**kw)


def parse_time(text: str) -> float:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_time(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_records(path, bbox=None, span: tuple[float, float] | None = None) -> RecordTable:
    """Read a "timestamp,lat,lon" CSV; bad and out-of-range rows are counted and skipped."""
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise FileUnreadable(str(e)) from e
    t, la, lo = [], [], []
    bad = outside = rows = 0
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return RecordTable(np.zeros(0), np.zeros(0), np.zeros(0))
        cols = [h.strip().lower() for h in header]
        try:
            it, ilat, ilon = cols.index("timestamp"), cols.index("lat"), cols.index("lon")
        except ValueError:
            raise AllRowsMalformed(f"{path}: header must be timestamp,lat,lon") from None
        for row in reader:
            if not row:
                continue
            rows += 1
            try:
                ts = parse_time(row[it])
                lat = float(row[ilat])
                lon = float(row[ilon])
            except (ValueError, IndexError):
                bad += 1
                continue
            if not (-90 <= lat <= 90 and -180 <= lon <= 180) or not (math.isfinite(lat) and math.isfinite(lon)):
                bad += 1
                continue
            if bbox is not None and not (bbox[0] <= lon <= bbox[2] and bbox[1] <= lat <= bbox[3]):
                outside += 1
                continue
            if span is not None and not (span[0] <= ts < span[1]):
                outside += 1
                continue
            t.append(ts)
            la.append(lat)
            lo.append(lon)
    if rows and bad == rows:
        raise AllRowsMalformed(f"{path}: none of {rows} rows parsed")
    if bad or outside:
        log.info("records: %d malformed, %d out of range", bad, outside)
    return RecordTable(np.array(t), np.array(la), np.array(lo), bad, outside)


def write_records(path, table: RecordTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "lat", "lon"])
        for t, la, lo in zip(table.t.tolist(), table.lat.tolist(), table.lon.tolist()):
            w.writerow([format_time(t), f"{la:.7f}", f"{lo:.7f}"])


@dataclass
class GeometryInput:
    roads: list  # list of [(lon, lat), ...]
    obstacles: list  # list of Polygon
    skipped: int = 0

    def __iter__(self):
        return iter((self.roads, self.obstacles))


def parse_geometry(path) -> GeometryInput:
    """Roads (LineString/MultiLineString, kind=road) and obstacles (Polygon/MultiPolygon, kind=obstacle)."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise FileUnreadable(str(e)) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidJson(f"{path}: {e}") from e
    return geometry_from_geojson(doc)


def geometry_from_geojson(doc: dict) -> GeometryInput:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise InvalidJson("expected a GeoJSON FeatureCollection")
    roads, obstacles = [], []
    skipped = 0
    for feat in doc.get("features", []):
        kind = (feat.get("properties") or {}).get("kind")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if kind == "road" and gtype == "LineString":
            roads.append([tuple(map(float, c[:2])) for c in coords])
        elif kind == "road" and gtype == "MultiLineString":
            roads.extend([tuple(map(float, c[:2])) for c in line] for line in coords)
        elif kind == "obstacle" and gtype == "Polygon":
            obstacles.append(Polygon.from_geojson(coords))
        elif kind == "obstacle" and gtype == "MultiPolygon":
            obstacles.extend(Polygon.from_geojson(part) for part in coords)
        else:
            skipped += 1
    if skipped:
        log.warning("geometry: skipped %d features with unknown kind or type", skipped)
    if not roads:
        raise NoRoads("geometry has no road features")
    for r in roads:
        if len(r) < 2:
            raise InvalidJson("road with fewer than two vertices")
    return GeometryInput(roads, obstacles, skipped)


def geometry_to_geojson(roads, obstacles) -> dict:
    feats = [
        {"type": "Feature", "properties": {"kind": "road"}, "geometry": {"type": "LineString", "coordinates": [list(c) for c in r]}}
        for r in roads
    ]
    feats += [{"type": "Feature", "properties": {"kind": "obstacle"}, "geometry": {"type": "Polygon", "coordinates": ob.to_geojson()}} for ob in obstacles]
    return {"type": "FeatureCollection", "features": feats}


def to_shapely(shape):
    """Shapely geometry for a Polygon or a sequence of Polygons."""
    if isinstance(shape, Polygon):
        return shapely.Polygon(shape.exterior, shape.holes)
    return shapely.MultiPolygon([shapely.Polygon(p.exterior, p.holes) for p in shape])


def locate_points(shapes: Sequence, lat, lon) -> np.ndarray:
    """Index of the containing shape per point, -1 if none.

    Points on a shared boundary go to the lowest index. Candidate points come
    from a uniform grid of buckets over the shapes' bounding boxes.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    out = np.full(lat.shape[0], -1, dtype=np.int64)
    if not len(shapes) or not lat.size:
        return out
    geoms = [to_shapely(s) for s in shapes]
    bounds = np.array([g.bounds for g in geoms])
    x0, y0 = bounds[:, 0].min(), bounds[:, 1].min()
    cw = max(float(np.median(bounds[:, 2] - bounds[:, 0])), 1e-9)
    ch = max(float(np.median(bounds[:, 3] - bounds[:, 1])), 1e-9)
    bx = np.floor((lon - x0) / cw).astype(np.int64)
    by = np.floor((lat - y0) / ch).astype(np.int64)
    key = by * (1 << 32) + bx
    order = np.argsort(key, kind="stable")
    skey = key[order]
    for i, g in enumerate(geoms):
        b = bounds[i]
        cx0, cx1 = int(math.floor((b[0] - x0) / cw)), int(math.floor((b[2] - x0) / cw))
        cy0, cy1 = int(math.floor((b[1] - y0) / ch)), int(math.floor((b[3] - y0) / ch))
        parts = []
        for cy in range(cy0, cy1 + 1):
            lo_k = cy * (1 << 32) + cx0
            hi_k = cy * (1 << 32) + cx1
            s, e = np.searchsorted(skey, lo_k, "left"), np.searchsorted(skey, hi_k, "right")
            if e > s:
                parts.append(order[s:e])
        if not parts:
            continue
        cand = np.concatenate(parts)
        cand = cand[out[cand] < 0]
        if cand.size == 0:
            continue
        hit = shapely.intersects_xy(g, lon[cand], lat[cand])
        out[cand[hit]] = i
    return out


def bin_records(records, elements: Sequence, interval_s: int, t0: float, t_end: float):
    """Count records per (interval, element).

    ``elements`` are Polygons or lists of Polygons; returns (T x N counts,
    unassigned count). Records outside [t0, t_end) count as unassigned.
    """
    from .metrics import DemandMatrix

    if not t_end > t0:
        raise EmptyTimeRange(f"t_end {t_end} must exceed t0 {t0}")
    table = records if isinstance(records, RecordTable) else RecordTable.from_records(list(records))
    T = int(math.ceil((t_end - t0) / interval_s))
    tidx = np.floor((table.t - t0) / interval_s).astype(np.int64)
    in_time = (table.t >= t0) & (table.t < t_end)
    where = locate_points(elements, table.lat, table.lon)
    ok = in_time & (where >= 0)
    counts = np.zeros((T, len(elements)))
    np.add.at(counts, (tidx[ok], where[ok]), 1.0)
    unassigned = int(len(table) - ok.sum())
    return DemandMatrix(counts, interval_s, t0), unassigned
