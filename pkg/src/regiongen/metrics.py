"""Demand series metrics: daily autocorrelation, specificity, aggregation, MAPE."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import shapely

from .geometry import Polygon, geohash_cell_index, geohash_cell_size

HOURS_PER_DAY = 24


class ZeroVariance(ValueError):
    def __init__(self, msg="series has zero variance", cluster=None):
        super().__init__(msg)
        self.cluster = cluster


class LagTooLarge(ValueError):
    pass


class UnassignedElement(ValueError):
    pass


class ZeroArea(ValueError):
    pass


class NothingRetained(ValueError):
    pass


class HistoryTooShort(ValueError):
    pass


@dataclass
class DemandMatrix:
    """T x N counts per time interval and element."""

    values: np.ndarray
    interval_s: int = 3600
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("demand matrix must be 2-D (T x N)")
        if (self.values < 0).any():
            raise ValueError("demand counts must be nonnegative")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def steps_per_day(self) -> int:
        return daily_lag(self.interval_s)

    def slice(self, start: int, stop: int) -> "DemandMatrix":
        return DemandMatrix(self.values[start:stop], self.interval_s, self.t0 + start * self.interval_s)


@dataclass
class ServiceArea:
    """Serviced (vs) and total (ts) area per element, km^2."""

    vs: np.ndarray
    ts: np.ndarray

    def __post_init__(self):
        self.vs = np.asarray(self.vs, dtype=float)
        self.ts = np.asarray(self.ts, dtype=float)
        if self.vs.shape != self.ts.shape:
            raise ValueError("vs and ts must have the same shape")
        if (self.vs < 0).any() or (self.vs > self.ts * (1 + 1e-12)).any():
            raise ValueError("need 0 <= vs <= ts")


def daily_lag(interval_s: int) -> int:
    day = 86400
    if interval_s <= 0 or day % interval_s:
        raise ValueError(f"interval {interval_s}s does not divide a day")
    return day // interval_s


def _exact_sum(values: np.ndarray) -> Fraction:
    """Exact rational sum of float64 values (no rounding)."""
    v = np.asarray(values, dtype=float)
    v = v[v != 0]
    if v.size == 0:
        return Fraction(0)
    m, e = np.frexp(v)
    mant = (m * 2.0**53).astype(np.int64)
    exp = e.astype(np.int64) - 53
    emin = int(exp.min())
    # split mantissas so int64 group sums cannot overflow
    hi = mant >> 26
    lo = mant & ((1 << 26) - 1)
    total = 0
    for ex in np.unique(exp):
        sel = exp == ex
        group = (int(hi[sel].sum()) << 26) + int(lo[sel].sum())
        total += group << int(ex - emin)
    if emin >= 0:
        return Fraction(total << emin)
    return Fraction(total, 1 << -emin)


def acf(series, k: int) -> float:
    """Lag-k autocorrelation with the T/(T-k) normalisation.

    rho_k = T * sum_{t>k} (s_t - m)(s_{t-k} - m) / ((T - k) * sum_t (s_t - m)^2)

    Products are formed in float64 and summed exactly, so a series that
    repeats with period k (and T a multiple of k) gives exactly 1.0.
    """
    s = np.asarray(series, dtype=float)
    T = s.shape[0]
    if not 1 <= k < T:
        raise LagTooLarge(f"lag {k} needs 1 <= k < T={T}")
    d = s - s.mean()
    den = _exact_sum(d * d)
    if den == 0:
        raise ZeroVariance()
    num = _exact_sum(d[k:] * d[:-k])
    return float(Fraction(T) * num / (Fraction(T - k) * den))


def acf_fast(series: np.ndarray, k: int) -> float:
    """Float64 version of :func:`acf`; zero-variance series score 0."""
    T = series.shape[0]
    d = series - series.mean()
    den = float(np.dot(d, d))
    if den <= 1e-12 * max(1.0, float(np.abs(series).max(initial=0.0))) ** 2:
        return 0.0
    return T * float(np.dot(d[k:], d[:-k])) / ((T - k) * den)


def acf_columns(values: np.ndarray, k: int) -> np.ndarray:
    """acf_fast of every column of a T x M matrix."""
    v = np.asarray(values, dtype=float)
    T = v.shape[0]
    d = v - v.mean(axis=0)
    den = np.einsum("tm,tm->m", d, d)
    num = np.einsum("tm,tm->m", d[k:], d[:-k])
    scale = np.maximum(1.0, np.abs(v).max(axis=0)) ** 2
    ok = den > 1e-12 * scale
    out = np.zeros(v.shape[1])
    out[ok] = T * num[ok] / ((T - k) * den[ok])
    return out


def acf_daily(series, interval_s: int = 3600) -> float:
    return acf(series, daily_lag(interval_s))


def assignment_matrix(assignment, M: int | None = None) -> np.ndarray:
    """N x M binary matrix X from a cluster-id vector (ids 0..M-1)."""
    a = np.asarray(assignment)
    if (a < 0).any():
        raise UnassignedElement(f"elements {np.nonzero(a < 0)[0].tolist()} are unassigned")
    M = int(a.max()) + 1 if M is None else M
    X = np.zeros((a.size, M))
    X[np.arange(a.size), a] = 1.0
    return X


def aggregate(d, assignment, M: int | None = None) -> np.ndarray:
    """S = D X: per-cluster demand series (T x M)."""
    values = d.values if isinstance(d, DemandMatrix) else np.asarray(d, dtype=float)
    a = np.asarray(assignment)
    if a.shape[0] != values.shape[1]:
        raise UnassignedElement(f"assignment covers {a.shape[0]} of {values.shape[1]} elements")
    return values @ assignment_matrix(a, M)


def mean_acf_objective(s: np.ndarray, lag: int = HOURS_PER_DAY, on_zero_variance: str = "raise") -> float:
    """f1: mean daily ACF over cluster series.

    With ``on_zero_variance="zero"`` flat clusters score 0 instead of
    raising; the optimiser uses that setting.
    """
    s = np.asarray(s, dtype=float)
    vals = []
    for j in range(s.shape[1]):
        try:
            vals.append(acf(s[:, j], lag))
        except ZeroVariance:
            if on_zero_variance == "raise":
                raise ZeroVariance(f"cluster {j} has zero variance", cluster=j) from None
            vals.append(0.0)
    return float(np.mean(vals))


def specificity_objective(sa: ServiceArea, assignment, M: int | None = None) -> float:
    """f2: mean over clusters of serviced area / total area."""
    X = assignment_matrix(assignment, M)
    vs = sa.vs @ X
    ts = sa.ts @ X
    if (ts <= 0).any():
        raise ZeroArea(f"clusters {np.nonzero(ts <= 0)[0].tolist()} have zero area")
    return float(np.mean(vs / ts))


# --- geohash service area ------------------------------------------------


def _cell_centers_in(poly, precision: int):
    """Lattice indices (iy, ix) of geohash cells whose centres lie in ``poly``."""
    dlat, dlon = geohash_cell_size(precision)
    if isinstance(poly, Polygon):
        parts = [poly]
    else:
        parts = list(poly)
    ys, xs = [], []
    for part in parts:
        min_lon, min_lat, max_lon, max_lat = part.bounds
        iy0 = int(np.floor((min_lat + 90.0) / dlat - 0.5))
        iy1 = int(np.ceil((max_lat + 90.0) / dlat - 0.5))
        ix0 = int(np.floor((min_lon + 180.0) / dlon - 0.5))
        ix1 = int(np.ceil((max_lon + 180.0) / dlon - 0.5))
        iy, ix = np.mgrid[iy0 : iy1 + 1, ix0 : ix1 + 1]
        lat = -90.0 + (iy + 0.5) * dlat
        lon = -180.0 + (ix + 0.5) * dlon
        sp = shapely.Polygon(part.exterior, part.holes)
        inside = shapely.intersects_xy(sp, lon, lat)
        ys.append(iy[inside])
        xs.append(ix[inside])
    return np.concatenate(ys), np.concatenate(xs)


def _cell_keys(iy: np.ndarray, ix: np.ndarray) -> np.ndarray:
    return iy.astype(np.int64) * (1 << 22) + ix.astype(np.int64)


def geohash_service_counts(shapes: Sequence, lats, lons, precision: int = 8):
    """(vs, ts) geohash cell counts for every shape.

    A cell belongs to the first shape (lowest index) whose closed area holds
    its centre. ``vs`` counts the owned cells containing at least one record.
    A shape too small to own any cell centre gets the cell under its
    centroid so that its total is never zero.
    """
    riy, rix = geohash_cell_index(lats, lons, precision)
    record_keys = np.unique(_cell_keys(riy, rix))
    claimed: set = set()
    vs = np.zeros(len(shapes))
    ts = np.zeros(len(shapes))
    dlat, dlon = geohash_cell_size(precision)
    for i, shp in enumerate(shapes):
        iy, ix = _cell_centers_in(shp, precision)
        keys = _cell_keys(iy, ix)
        if claimed:
            keys = np.array([k for k in keys.tolist() if k not in claimed], dtype=np.int64)
        if keys.size == 0:
            part = shp if isinstance(shp, Polygon) else shp[0]
            clon, clat = part.centroid()
            cy, cx = geohash_cell_index(clat, clon, precision)
            keys = _cell_keys(np.atleast_1d(cy), np.atleast_1d(cx))
        claimed.update(keys.tolist())
        ts[i] = keys.size
        vs[i] = np.count_nonzero(np.isin(keys, record_keys, assume_unique=True))
    return vs, ts


def serviced_area_from_geohash(records, element, precision: int = 8) -> tuple[int, int]:
    """(vs, ts) cell counts for one element; records are Points or (lat, lon) arrays."""
    if hasattr(records, "lat") and hasattr(records, "lon") and not isinstance(records, list):
        lats, lons = np.asarray(records.lat), np.asarray(records.lon)
    else:
        recs = list(records)
        lats = np.array([p.lat for p in recs], dtype=float)
        lons = np.array([p.lon for p in recs], dtype=float)
    vs, ts = geohash_service_counts([element], lats, lons, precision)
    return int(vs[0]), int(ts[0])


# --- evaluation ------------------------------------------------------------


def mean_daily_demand(s: np.ndarray, steps_per_day: int = HOURS_PER_DAY) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return s.mean(axis=0) * steps_per_day


def mape_at_recall(actual, predicted, min_daily_demand: float = 1.0, steps_per_day: int = HOURS_PER_DAY):
    """MAPE over clusters whose mean daily demand reaches the threshold.

    Returns (mape, recall, retained cluster mask). Intervals with zero actual
    demand are skipped.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {p.shape}")
    keep = mean_daily_demand(a, steps_per_day) >= min_daily_demand
    total = a.sum()
    if not keep.any() or total <= 0:
        raise NothingRetained("no cluster reaches the demand threshold")
    recall = float(a[:, keep].sum() / total)
    ak = a[:, keep]
    pk = p[:, keep]
    pos = ak > 0
    if not pos.any():
        raise NothingRetained("retained clusters have no positive demand")
    mape = float(np.mean(np.abs(pk[pos] - ak[pos]) / ak[pos]))
    return mape, recall, keep


def seasonal_naive_predict(s, horizon: int, lag: int = HOURS_PER_DAY) -> np.ndarray:
    """Forecast the last ``horizon`` steps by repeating the value one day earlier."""
    s = np.asarray(s, dtype=float)
    T = s.shape[0]
    if horizon < 1 or T - horizon < lag:
        raise HistoryTooShort(f"need at least {lag} steps of history before a {horizon}-step horizon, T={T}")
    return s[T - horizon - lag : T - lag].copy()


def recall_label(recall: float) -> str:
    return f"MAPE@{int(np.floor(recall * 100 + 1e-9))}%"


METRICS_HEADER = ["cluster_id", "acf_daily", "specificity", "area_km2", "mean_daily_demand"]


def cluster_metrics_rows(s: np.ndarray, vs, ts, areas, lag: int = HOURS_PER_DAY, ids=None):
    """Per-cluster metric dicts; flat clusters report an empty ACF."""
    s = np.asarray(s, dtype=float)
    mdd = mean_daily_demand(s, lag)
    rows = []
    for j in range(s.shape[1]):
        try:
            rho = acf(s[:, j], lag)
        except ZeroVariance:
            rho = None
        rows.append(
            {
                "cluster_id": j if ids is None else ids[j],
                "acf_daily": rho,
                "specificity": float(vs[j] / ts[j]) if ts[j] > 0 else None,
                "area_km2": float(areas[j]),
                "mean_daily_demand": float(mdd[j]),
            }
        )
    return rows


def write_metrics_csv(path, rows, extra_fields: Sequence[str] = ()) -> None:
    fields = list(extra_fields) + METRICS_HEADER
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else _fmt(r.get(k))) for k in fields})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
