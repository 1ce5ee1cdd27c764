import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import random_connected
from regiongen.metrics import acf_columns, acf_daily, aggregate, mape_at_recall, seasonal_naive_predict
from regiongen.partition import d_balance
from regiongen.synth import (
    Hotspot,
    InvalidSpec,
    River,
    SyntheticCitySpec,
    city_spec,
    default_hotspots,
    roads_and_obstacles,
    sample_records,
)


def hourly_counts(table, spec):
    h = np.floor((table.t - spec.t0) / 3600).astype(int)
    return np.bincount(h, minlength=spec.days * 24).astype(float)


def test_flat_hotspot_has_no_daily_structure():
    for seed in range(3):
        spec = SyntheticCitySpec(hotspots=(Hotspot(2.1, 2.1, 30.0, 0.0),), noise_rate=0.0, seed=seed)
        assert abs(acf_daily(hourly_counts(sample_records(spec), spec))) < 0.1


def test_strong_hotspot_is_periodic():
    spec = SyntheticCitySpec(hotspots=(Hotspot(2.1, 2.1, 50.0, 0.9, spread_m=100),), noise_rate=0.0, seed=1)
    recs = sample_records(spec)
    lon, lat = spec.to_lonlat(2.1, 2.1)
    near = (np.abs(recs.lon - lon) < 0.002) & (np.abs(recs.lat - lat) < 0.002)
    assert acf_daily(hourly_counts(recs.where(near), spec)) > 0.5


def test_record_count_within_three_sigma():
    hs = (Hotspot(1.0, 1.0, 10.0, 0.5, spread_m=50), Hotspot(3.0, 3.0, 4.0, 0.2, spread_m=50))
    spec = SyntheticCitySpec(hotspots=hs, noise_rate=5.0, days=10, seed=3)
    n = len(sample_records(spec))
    hours = spec.days * 24
    # sinusoids over whole days average to the base rate; a few edge points fall outside
    mean = (10.0 + 4.0 + 5.0) * hours
    assert abs(n - mean) < 3 * np.sqrt(mean)


def test_deterministic_under_seed():
    a = sample_records(city_spec(4, days=3))
    b = sample_records(city_spec(4, days=3))
    assert np.array_equal(a.t, b.t) and np.array_equal(a.lat, b.lat)
    c = sample_records(city_spec(5, days=3))
    assert len(a) != len(c) or not np.array_equal(a.t, c.t)


def test_records_inside_city_and_span():
    spec = city_spec(0, days=2)
    r = sample_records(spec)
    lo0, la0, lo1, la1 = spec.bbox
    assert ((r.lon > lo0) & (r.lon < lo1) & (r.lat > la0) & (r.lat < la1)).all()
    assert r.t.min() >= spec.t0 and r.t.max() < spec.t_end
    assert np.all(np.diff(r.t) >= 0)


def test_roads_include_edges_and_river():
    spec = SyntheticCitySpec(extent_km=1.0, road_spacing_m=250)
    roads, obstacles = roads_and_obstacles(spec)
    assert len(roads) == 10
    assert len(obstacles) == 1
    _, none = roads_and_obstacles(SyntheticCitySpec(extent_km=1.0, road_spacing_m=250, river=None))
    assert none == []


def test_default_hotspots_mix_amplitudes():
    hs = default_hotspots(0)
    assert sorted({h.amplitude for h in hs}) == [0.0, 0.3, 0.6, 0.9]


@pytest.mark.parametrize(
    "kw",
    [
        {"extent_km": 0},
        {"road_spacing_m": 9000},
        {"noise_rate": -1},
        {"hotspots": (Hotspot(1, 1, 5.0, 1.5),)},
        {"river": River(x_frac=1.2)},
    ],
)
def test_invalid_spec(kw):
    with pytest.raises(InvalidSpec):
        SyntheticCitySpec(**kw)


def poisson_daily(rng, n, rate, days=30):
    h = np.arange(days * 24)
    amp = rng.uniform(0.2, 0.8, n)
    ph = rng.uniform(0, 2 * np.pi, n)
    return rng.poisson(rate * (1 + amp * np.sin(2 * np.pi * h[:, None] / 24 + ph))).astype(float)


def test_more_data_more_regularity():
    mult = [0.25, 0.5, 1, 2, 4, 8]
    mono = pairs = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        vals = [float(np.mean(acf_columns(poisson_daily(rng, 20, 0.5 * m), 24))) for m in mult]
        mono += sum(b >= a for a, b in zip(vals, vals[1:]))
        pairs += len(vals) - 1
    assert mono / pairs >= 0.9


def test_higher_acf_lower_naive_error():
    rng = np.random.default_rng(2)
    D = poisson_daily(rng, 60, rng.uniform(0.05, 3.0, 60))
    a = d_balance(random_connected(rng, 60, 0.08, 0.12), D.sum(axis=0), 15).assignment
    S = aggregate(D, a)
    rho = acf_columns(S[: 24 * 24], 24)
    pred = seasonal_naive_predict(S, 24 * 6)
    errs = [mape_at_recall(S[-24 * 6 :, [j]], pred[:, [j]], 0.0)[0] for j in range(S.shape[1])]
    assert spearmanr(rho, errs)[0] < 0


def test_aggregation_conserves_demand(rng):
    D = poisson_daily(rng, 12, 2.0, days=3)
    for M in (1, 3, 12):
        a = d_balance(random_connected(rng, 12), D.sum(axis=0), M).assignment
        assert aggregate(D, a).sum() == D.sum()
