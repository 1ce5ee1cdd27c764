"""Aggregatable graph over atomic elements.

Nodes are elements; an edge means two elements may share a region. Elements
that are oversize or already predictable stay standalone with no edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Polygon, bbox_distance_m, min_distance_m, segment_crosses


class AllFiltered(ValueError):
    pass


@dataclass
class AtomicElement:
    id: int
    polygon: Polygon
    ts_km2: float
    vs_km2: float = 0.0
    series: np.ndarray | None = None
    acf_daily: float | None = None

    def __post_init__(self):
        if self.ts_km2 <= 0:
            raise ValueError(f"element {self.id}: area must be positive")
        if self.vs_km2 > self.ts_km2 * (1 + 1e-9):
            raise ValueError(f"element {self.id}: serviced area exceeds total area")

    def mean_daily_demand(self, steps_per_day: int = 24) -> float:
        if self.series is None or len(self.series) == 0:
            return 0.0
        return float(np.mean(self.series)) * steps_per_day


@dataclass
class AggregatableGraph:
    nodes: list[int]
    edges: set[tuple[int, int]] = field(default_factory=set)
    standalone: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.edges = {(min(u, v), max(u, v)) for u, v in self.edges}
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on {u}")
            if u in self.standalone or v in self.standalone:
                raise ValueError(f"edge ({u}, {v}) touches a standalone node")

    def neighbors(self) -> dict[int, list[int]]:
        adj = {n: [] for n in self.nodes}
        for u, v in sorted(self.edges):
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def degree(self, n: int) -> int:
        return sum(1 for e in self.edges if n in e)

    def movable_nodes(self) -> list[int]:
        return [n for n in self.nodes if n not in self.standalone]

    def dumps(self) -> str:
        """Edge-list text: standalone header section then one "u v" per line."""
        lines = ["standalone: " + " ".join(str(n) for n in sorted(self.standalone))]
        lines += [f"{u} {v}" for u, v in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, nodes: Sequence[int] | None = None) -> "AggregatableGraph":
        standalone: set[int] = set()
        edges = set()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("standalone:"):
                standalone = {int(t) for t in line.split(":", 1)[1].split()}
                continue
            u, v = (int(t) for t in line.split())
            edges.add((u, v))
        if nodes is None:
            nodes = sorted(standalone | {n for e in edges for n in e})
        return cls(list(nodes), edges, standalone)


def filter_elements(elements: Sequence[AtomicElement], alpha: float, steps_per_day: int = 24):
    """Keep elements whose mean daily demand is at least ``alpha``.

    Returns (kept elements, demand recall of the kept set).
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    kept = [e for e in elements if e.mean_daily_demand(steps_per_day) >= alpha]
    if not kept:
        raise AllFiltered(f"no element reaches a mean daily demand of {alpha}")
    total = sum(float(np.sum(e.series)) for e in elements if e.series is not None)
    kept_total = sum(float(np.sum(e.series)) for e in kept if e.series is not None)
    recall = kept_total / total if total > 0 else 1.0
    return kept, recall


def mark_standalone(elements: Iterable[AtomicElement], max_area_km2: float = 5.0, acf_threshold: float = 0.5) -> set[int]:
    """Ids of oversize or already-predictable elements (either reason suffices)."""
    if max_area_km2 <= 0 or acf_threshold <= 0:
        raise ValueError("thresholds must be positive")
    out = set()
    for e in elements:
        if e.ts_km2 > max_area_km2:
            out.add(e.id)
        elif e.acf_daily is not None and e.acf_daily > acf_threshold:
            out.add(e.id)
    return out


def build_edges(
    elements: Sequence[AtomicElement],
    standalone: set[int],
    tau_m: float = 50.0,
    obstacles: Sequence[Polygon] = (),
) -> AggregatableGraph:
    """Connect non-standalone pairs closer than ``tau_m`` with no obstacle between."""
    if tau_m < 0:
        raise ValueError("tau_m must be nonnegative")
    nodes = [e.id for e in elements]
    movable = [e for e in elements if e.id not in standalone]
    boxes = {e.id: e.polygon.bounds for e in movable}
    ob_boxes = [(ob, ob.bounds) for ob in obstacles]
    edges = set()
    if tau_m > 0 and movable:
        # sweep on min longitude so only nearby boxes are compared
        order = sorted(movable, key=lambda e: boxes[e.id][0])
        lat_mid = np.mean([(b[1] + b[3]) / 2 for b in boxes.values()])
        pad_deg = tau_m / (111320.0 * max(np.cos(np.radians(lat_mid)), 1e-6)) * 1.01
        for i, a in enumerate(order):
            ba = boxes[a.id]
            for b in order[i + 1 :]:
                bb = boxes[b.id]
                if bb[0] > ba[2] + pad_deg:
                    break
                if bbox_distance_m(ba, bb) >= tau_m * 1.001:
                    continue
                if min_distance_m(a.polygon, b.polygon) >= tau_m:
                    continue
                near = [
                    ob
                    for ob, ob_b in ob_boxes
                    if not (
                        ob_b[0] > max(ba[2], bb[2])
                        or ob_b[2] < min(ba[0], bb[0])
                        or ob_b[1] > max(ba[3], bb[3])
                        or ob_b[3] < min(ba[1], bb[1])
                    )
                ]
                if near and segment_crosses(a.polygon, b.polygon, near):
                    continue
                edges.add((min(a.id, b.id), max(a.id, b.id)))
    return AggregatableGraph(nodes, edges, set(standalone) & set(nodes))
