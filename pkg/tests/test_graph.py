import numpy as np
import pytest

from regiongen.geometry import Polygon, min_distance_m, segment_crosses
from regiongen.graph import (
    AggregatableGraph,
    AllFiltered,
    AtomicElement,
    build_edges,
    filter_elements,
    mark_standalone,
)

M_DEG = 1 / 111320.0  # one metre of longitude at the equator


def box_m(x0, y0, x1, y1):
    return Polygon.box(x0 * M_DEG, y0 * M_DEG, x1 * M_DEG, y1 * M_DEG)


def elem(i, poly, area=1.0, series=None, acf=None):
    return AtomicElement(i, poly, area, 0.0, None if series is None else np.asarray(series, float), acf)


def test_filter_identity_and_empty_removal():
    es = [elem(1, box_m(0, 0, 10, 10), series=np.zeros(48)), elem(2, box_m(20, 0, 30, 10), series=np.ones(48))]
    kept, recall = filter_elements(es, 0.0)
    assert kept == es and recall == 1.0
    kept, recall = filter_elements(es, 0.1)
    assert [e.id for e in kept] == [2]
    assert recall == 1.0
    with pytest.raises(AllFiltered):
        filter_elements(es, 100.0)


def test_filter_recall():
    es = [elem(1, box_m(0, 0, 1, 1), series=np.full(24, 0.001)), elem(2, box_m(2, 0, 3, 1), series=np.ones(24))]
    kept, recall = filter_elements(es, 0.1)
    assert recall == pytest.approx(24 / 24.024)


def test_standalone_rules():
    es = [
        elem(1, box_m(0, 0, 1, 1), area=6.0),
        elem(2, box_m(0, 0, 1, 1), area=0.1, acf=0.6),
        elem(3, box_m(0, 0, 1, 1), area=1.0, acf=0.4),
        elem(4, box_m(0, 0, 1, 1), area=5.0, acf=0.5),
    ]
    assert mark_standalone(es) == {1, 2}


def fig4_like():
    """Seven elements: 1 oversize, 3 predictable, 2 across a river, 4-7 a block."""
    es = [
        elem(1, box_m(-3000, 0, -1000, 2000), area=6.0),
        elem(2, box_m(0, 0, 100, 100)),
        elem(3, box_m(0, 120, 100, 220), acf=0.7),
        elem(4, box_m(200, 0, 300, 100)),
        elem(5, box_m(300, 0, 400, 100)),
        elem(6, box_m(300, 100, 400, 200)),
        elem(7, box_m(400, 0, 500, 100)),
    ]
    river = box_m(120, -500, 160, 500)
    return es, [river]


def test_fig4_like_graph():
    es, obstacles = fig4_like()
    sa = mark_standalone(es)
    assert sa == {1, 3}
    g = build_edges(es, sa, 50.0, obstacles)
    # 4-6 touch only at a corner, distance 0, so they connect too
    assert g.edges == {(4, 5), (4, 6), (5, 6), (5, 7), (6, 7)}
    assert g.degree(2) == 0
    assert g.movable_nodes() == [2, 4, 5, 6, 7]


def test_river_blocks_close_pair():
    a, b = box_m(0, 0, 100, 100), box_m(130, 0, 230, 100)
    river = box_m(110, -50, 120, 150)
    es = [elem(1, a), elem(2, b)]
    assert build_edges(es, set(), 50.0).edges == {(1, 2)}
    assert build_edges(es, set(), 50.0, [river]).edges == set()


def test_tau_zero_gives_no_edges():
    es, _ = fig4_like()
    assert build_edges(es, set(), 0.0).edges == set()


def test_saturation_complete_graph():
    es = [elem(i, box_m(10 * i, 0, 10 * i + 5, 5)) for i in range(6)]
    g = build_edges(es, {2}, 1000.0)
    movable = [0, 1, 3, 4, 5]
    assert g.edges == {(u, v) for u in movable for v in movable if u < v}


def test_edges_match_pairwise_oracle(rng):
    for _ in range(5):
        es = []
        for i in range(25):
            x, y = rng.uniform(0, 800, 2)
            w, h = rng.uniform(10, 80, 2)
            es.append(elem(i, box_m(x, y, x + w, y + h)))
        obstacles = [box_m(390, -100, 410, 900)]
        sa = set(rng.choice(25, 3, replace=False).tolist())
        g = build_edges(es, sa, 50.0, obstacles)
        expect = set()
        for a in es:
            for b in es:
                if a.id < b.id and a.id not in sa and b.id not in sa:
                    if min_distance_m(a.polygon, b.polygon) < 50.0 and not segment_crosses(a.polygon, b.polygon, obstacles):
                        expect.add((a.id, b.id))
        assert g.edges == expect


def test_graph_text_roundtrip():
    g = AggregatableGraph([1, 2, 3, 4], {(2, 1), (3, 2)}, {4})
    back = AggregatableGraph.loads(g.dumps(), nodes=[1, 2, 3, 4])
    assert back.edges == {(1, 2), (2, 3)}
    assert back.standalone == {4}


def test_graph_rejects_standalone_edges():
    with pytest.raises(ValueError):
        AggregatableGraph([1, 2], {(1, 2)}, {2})
    with pytest.raises(ValueError):
        AggregatableGraph([1], {(1, 1)})
