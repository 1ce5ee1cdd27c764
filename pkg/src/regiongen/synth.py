"""Seeded synthetic city: grid roads, an optional river, periodic demand hotspots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import KM_PER_DEG, Polygon
from .ingest import RecordTable, parse_time


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class Hotspot:
    x_km: float
    y_km: float
    rate: float  # records per hour at the daily mean
    amplitude: float = 0.0  # relative daily swing, 0..1
    phase: float = 0.0
    spread_m: float = 250.0


@dataclass(frozen=True)
class River:
    x_frac: float = 0.63  # position across the city, west to east
    width_m: float = 60.0
    slant_m: float = 90.0  # eastward drift from south to north bank ends


@dataclass(frozen=True)
class SyntheticCitySpec:
    extent_km: float = 4.2
    road_spacing_m: float = 200.0
    river: River | None = field(default_factory=River)
    hotspots: tuple = ()
    noise_rate: float = 20.0  # uniform background records per hour
    day_sigma: float = 0.0  # log-normal spread of each hotspot's daily volume
    seed: int = 0
    days: int = 30
    lon0: float = 116.30
    lat0: float = 39.90
    start: str = "2024-03-04T00:00:00Z"

    def __post_init__(self):
        if self.extent_km <= 0 or self.road_spacing_m <= 0 or self.days < 1:
            raise InvalidSpec("extent, spacing and days must be positive")
        if self.road_spacing_m > self.extent_km * 1000:
            raise InvalidSpec("road spacing exceeds the city extent")
        if self.noise_rate < 0 or self.day_sigma < 0:
            raise InvalidSpec("noise rate and day_sigma must be nonnegative")
        for h in self.hotspots:
            if h.rate < 0 or not 0 <= h.amplitude <= 1 or h.spread_m <= 0:
                raise InvalidSpec(f"bad hotspot {h}")
        if self.river is not None and not (0 < self.river.x_frac < 1 and self.river.width_m > 0):
            raise InvalidSpec("river must lie inside the city with positive width")

    @property
    def t0(self) -> float:
        return parse_time(self.start)

    @property
    def t_end(self) -> float:
        return self.t0 + self.days * 86400.0

    def to_lonlat(self, x_km, y_km):
        x_km = np.asarray(x_km, dtype=float)
        y_km = np.asarray(y_km, dtype=float)
        lon = self.lon0 + x_km / (KM_PER_DEG * math.cos(math.radians(self.lat0)))
        lat = self.lat0 + y_km / KM_PER_DEG
        return lon, lat

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lon1, lat1 = self.to_lonlat(self.extent_km, self.extent_km)
        return (self.lon0, self.lat0, float(lon1), float(lat1))


def default_hotspots(seed: int, extent_km: float = 4.2, count: int = 14) -> tuple:
    """Hotspots with mixed daily amplitudes, placed uniformly at random."""
    rng = np.random.default_rng([seed, 7])
    amps = [0.0, 0.3, 0.6, 0.9]
    out = []
    for i in range(count):
        out.append(
            Hotspot(
                x_km=float(rng.uniform(0.3, extent_km - 0.3)),
                y_km=float(rng.uniform(0.3, extent_km - 0.3)),
                rate=float(rng.uniform(3.0, 25.0)),
                amplitude=amps[i % len(amps)],
                phase=float(rng.uniform(0.0, 2 * np.pi)),
                spread_m=float(rng.uniform(150.0, 450.0)),
            )
        )
    return tuple(out)


def city_spec(seed: int = 0, **kw) -> SyntheticCitySpec:
    """Default evaluation city: random hotspots and 30% day-to-day volume spread."""
    kw.setdefault("hotspots", default_hotspots(seed, kw.get("extent_km", 4.2)))
    kw.setdefault("day_sigma", 0.3)
    return SyntheticCitySpec(seed=seed, **kw)


def roads_and_obstacles(spec: SyntheticCitySpec):
    """Grid road polylines (including the city edges) and the river polygon."""
    ext = spec.extent_km
    n = int(round(ext * 1000 / spec.road_spacing_m))
    ticks = [min(i * spec.road_spacing_m / 1000, ext) for i in range(n + 1)]
    if ticks[-1] < ext - 1e-9:
        ticks.append(ext)
    roads = []
    for t in ticks:
        lon, lat = spec.to_lonlat([t, t], [0.0, ext])
        roads.append(np.column_stack([lon, lat]))
        lon, lat = spec.to_lonlat([0.0, ext], [t, t])
        roads.append(np.column_stack([lon, lat]))
    obstacles = []
    if spec.river is not None:
        r = spec.river
        xc = r.x_frac * ext
        hw = r.width_m / 2000
        sl = r.slant_m / 1000
        margin = 0.05 * ext
        xs = [xc - hw, xc + hw, xc + hw + sl, xc - hw + sl, xc - hw]
        ys = [-margin, -margin, ext + margin, ext + margin, -margin]
        lon, lat = spec.to_lonlat(xs, ys)
        obstacles.append(Polygon(list(zip(lon.tolist(), lat.tolist()))))
    return roads, obstacles


def hourly_intensity(h: Hotspot, hours: np.ndarray) -> np.ndarray:
    lam = h.rate * (1 + h.amplitude * np.sin(2 * np.pi * (hours % 24) / 24 + h.phase))
    return np.clip(lam, 0.0, None)


def sample_records(spec: SyntheticCitySpec) -> RecordTable:
    """Inhomogeneous Poisson records: hotspot bursts plus uniform noise."""
    rng = np.random.default_rng(spec.seed)
    hours = np.arange(spec.days * 24)
    ext = spec.extent_km
    xs, ys, ts = [], [], []
    for h in spec.hotspots:
        lam = hourly_intensity(h, hours)
        if spec.day_sigma > 0:
            # mean-one daily factor: busy and quiet days shift the whole profile
            f = np.exp(rng.normal(-spec.day_sigma**2 / 2, spec.day_sigma, spec.days))
            lam = lam * np.repeat(f, 24)
        counts = rng.poisson(lam)
        n = int(counts.sum())
        hour_of = np.repeat(hours, counts)
        xs.append(h.x_km + rng.normal(0, h.spread_m / 1000, n))
        ys.append(h.y_km + rng.normal(0, h.spread_m / 1000, n))
        ts.append(hour_of + rng.random(n))
    counts = rng.poisson(np.full(hours.shape, spec.noise_rate))
    n = int(counts.sum())
    xs.append(rng.uniform(0, ext, n))
    ys.append(rng.uniform(0, ext, n))
    ts.append(np.repeat(hours, counts) + rng.random(n))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    inside = (x > 0) & (x < ext) & (y > 0) & (y < ext)
    x, y, t = x[inside], y[inside], t[inside]
    order = np.argsort(t, kind="stable")
    lon, lat = spec.to_lonlat(x[order], y[order])
    # whole seconds keep the CSV round trip exact
    secs = np.floor(spec.t0 + t[order] * 3600.0)
    return RecordTable(secs, np.round(lat, 7), np.round(lon, 7))
