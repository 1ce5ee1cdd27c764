import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import acf_bruteforce
from regiongen.geometry import Point, Polygon, geohash_cell_size
from regiongen.metrics import (
    DemandMatrix,
    HistoryTooShort,
    LagTooLarge,
    NothingRetained,
    ServiceArea,
    UnassignedElement,
    ZeroArea,
    ZeroVariance,
    acf,
    acf_columns,
    acf_daily,
    acf_fast,
    aggregate,
    daily_lag,
    geohash_service_counts,
    mape_at_recall,
    mean_acf_objective,
    recall_label,
    seasonal_naive_predict,
    serviced_area_from_geohash,
    specificity_objective,
)


def test_acf_matches_bruteforce(rng):
    for _ in range(30):
        T = int(rng.integers(50, 300))
        k = int(rng.integers(1, 48))
        s = rng.poisson(rng.uniform(0.5, 20), T).astype(float) + rng.random(T)
        assert acf(s, k) == pytest.approx(acf_bruteforce(s, k), rel=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60), st.integers(1, 10))
@settings(max_examples=60, deadline=None)
def test_acf_property(values, k):
    s = np.array(values)
    if k >= len(s) or np.ptp(s) == 0:
        return
    # a tiny spread can make float64 centring lose everything
    if np.ptp(s) < 1e-6 * max(1.0, np.abs(s).max()):
        return
    ref = acf_bruteforce(s, k)
    assert acf(s, k) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_periodic_series_is_exactly_one(rng):
    for k in (2, 7, 24, 48):
        base = rng.normal(size=k) * 3.7
        s = np.tile(base, 9)
        assert acf(s, k) == 1.0


def test_sinusoid_daily_is_exactly_one():
    h = np.arange(720)
    assert acf_daily(5 + 3 * np.sin(2 * np.pi * h / 24)) == 1.0


def test_alternating_series_is_minus_one():
    s = np.array([1.0, -1.0] * 50)
    assert acf(s, 1) == -1.0


def test_noise_is_near_zero():
    s = np.random.default_rng(3).normal(size=720)
    assert abs(acf_daily(s)) < 0.1


def test_constant_series_raises():
    with pytest.raises(ZeroVariance):
        acf(np.full(50, 4.0), 24)


def test_lag_too_large():
    with pytest.raises(LagTooLarge):
        acf(np.arange(10.0), 10)


def test_daily_lag():
    assert daily_lag(1800) == 48
    assert daily_lag(3600) == 24
    with pytest.raises(ValueError):
        daily_lag(7000)


def test_fast_versions_agree(rng):
    m = rng.poisson(4, size=(200, 6)).astype(float)
    m[:, 5] = 2.0
    cols = acf_columns(m, 24)
    for j in range(5):
        assert cols[j] == pytest.approx(acf(m[:, j], 24), abs=1e-12)
        assert acf_fast(m[:, j], 24) == pytest.approx(cols[j], abs=1e-12)
    assert cols[5] == 0.0


def test_aggregate_identity_and_total(rng):
    d = DemandMatrix(rng.poisson(3, size=(48, 5)))
    assert np.array_equal(aggregate(d, np.arange(5)), d.values)
    assert np.array_equal(aggregate(d, np.zeros(5, dtype=int))[:, 0], d.values.sum(axis=1))


def test_aggregate_rejects_unassigned():
    with pytest.raises(UnassignedElement):
        aggregate(np.ones((4, 3)), np.array([0, -1, 1]))
    with pytest.raises(UnassignedElement):
        aggregate(np.ones((4, 3)), np.array([0, 1]))


def test_mean_acf_objective():
    h = np.arange(96)
    periodic = np.column_stack([np.sin(2 * np.pi * h / 24) + 2, np.cos(2 * np.pi * h / 24) + 2])
    assert mean_acf_objective(periodic) == 1.0
    flat = np.column_stack([periodic[:, 0], np.ones(96)])
    with pytest.raises(ZeroVariance):
        mean_acf_objective(flat)
    assert mean_acf_objective(flat, on_zero_variance="zero") == 0.5


def test_mean_of_two_acfs(rng):
    a, b = rng.poisson(5, size=(2, 120)).astype(float)
    s = np.column_stack([a, b])
    assert mean_acf_objective(s) == pytest.approx((acf(a, 24) + acf(b, 24)) / 2)


def test_specificity_objective():
    sa = ServiceArea([4.0, 0.0], [10.0, 10.0])
    assert specificity_objective(sa, [0, 0]) == pytest.approx(0.2)
    full = ServiceArea([3.0, 5.0], [3.0, 5.0])
    assert specificity_objective(full, [0, 1]) == 1.0
    with pytest.raises(ZeroArea):
        specificity_objective(ServiceArea([0.0, 0.0], [0.0, 1.0]), [0, 1])
    with pytest.raises(ValueError):
        ServiceArea([2.0], [1.0])


def _cell_block(n=10):
    dlat, dlon = geohash_cell_size(8)
    iy0, ix0 = 2**19 + 300, 2**19 + 700
    lat0, lon0 = -90 + iy0 * dlat, -180 + ix0 * dlon
    poly = Polygon.box(lon0, lat0, lon0 + n * dlon, lat0 + n * dlat)
    centres = [(lat0 + (i + 0.5) * dlat, lon0 + (j + 0.5) * dlon) for i in range(n) for j in range(n)]
    return poly, centres


def test_geohash_specificity_of_37_cells(rng):
    poly, centres = _cell_block()
    picks = rng.choice(len(centres), 37, replace=False)
    pts = [Point(lon=centres[i][1], lat=centres[i][0]) for i in picks for _ in range(2)]
    vs, ts = serviced_area_from_geohash(pts, poly)
    assert ts == 100
    assert vs == 37
    assert vs / ts == pytest.approx(0.37)


def test_geohash_no_records_and_saturation():
    poly, centres = _cell_block(4)
    assert serviced_area_from_geohash([], poly) == (0, 16)
    assert serviced_area_from_geohash([Point(lon=c[1], lat=c[0]) for c in centres], poly) == (16, 16)


def test_cells_owned_once():
    poly, centres = _cell_block(4)
    lat = np.array([c[0] for c in centres])
    lon = np.array([c[1] for c in centres])
    vs, ts = geohash_service_counts([poly, poly], lat, lon)
    assert ts[0] == 16 and vs[0] == 16
    # the duplicate owns nothing but falls back to its centroid cell
    assert ts[1] == 1


def test_mape_examples(rng):
    a = rng.uniform(1, 10, size=(24, 3))
    assert mape_at_recall(a, a)[0] == 0.0
    m, r, keep = mape_at_recall(a, 1.1 * a)
    assert m == pytest.approx(0.1)
    assert r == 1.0 and keep.all()
    b = a.copy()
    b[:, 2] = 0.0
    b[5, 2] = 0.5
    m, r, keep = mape_at_recall(b, b * 1.2)
    assert r < 1.0
    assert r == pytest.approx(b[:, :2].sum() / b.sum())
    assert keep.tolist() == [True, True, False]
    assert m == pytest.approx(0.2)


def test_mape_nothing_retained():
    with pytest.raises(NothingRetained):
        mape_at_recall(np.zeros((24, 2)), np.zeros((24, 2)))


def test_seasonal_naive():
    h = np.arange(24 * 5)
    s = np.column_stack([np.sin(2 * np.pi * h / 24) + 3, np.full(h.size, 2.0)])
    pred = seasonal_naive_predict(s, 24)
    assert np.allclose(pred, s[-24:], atol=1e-12)
    with pytest.raises(HistoryTooShort):
        seasonal_naive_predict(s[:30], 10)


def test_recall_label():
    assert recall_label(0.975) == "MAPE@97%"
    assert recall_label(1.0) == "MAPE@100%"
