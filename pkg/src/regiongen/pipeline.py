"""End-to-end flow: segment, optimize, evaluate, export, scalability sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Polygon, polygon_area_km2
from .graph import AtomicElement, build_edges, filter_elements, mark_standalone
from .ingest import PipelineConfig, RecordTable, bin_records, format_time, parse_time
from .metrics import (
    ZeroVariance,
    acf,
    acf_fast,
    geohash_service_counts,
    mape_at_recall,
    mean_daily_demand,
    recall_label,
    seasonal_naive_predict,
    write_metrics_csv,
)
from .optimizer import OptimizerConfig, ParetoSet, co_optimize, write_trace_csv
from .partition import (
    ClusteringProblem,
    ClusterSolution,
    InfeasibleM,
    adjacency_from_edges,
    check_feasible,
    d_balance,
    estimate_cluster_scale,
    fluid_grow,
    greedy_grow,
    repair,
)
from .raster import segment

log = logging.getLogger(__name__)

TRAIN_FRAC = 0.8
VALID_FRAC = 0.1


class InfeasibleOptimization(RuntimeError):
    pass


# --- elements ----------------------------------------------------------------


def segment_city(roads, obstacles, cfg: PipelineConfig, bbox=None) -> list[tuple[int, Polygon]]:
    bbox = bbox or cfg.bbox
    _, polys = segment(roads, obstacles, cfg.resolution, cfg.kernel, bbox=bbox)
    return [(i, p) for i, (_, p) in enumerate(polys)]


def elements_to_geojson(elements: Sequence[tuple[int, Polygon]]) -> dict:
    feats = []
    for eid, poly in elements:
        feats.append(
            {
                "type": "Feature",
                "properties": {"id": int(eid), "area_km2": polygon_area_km2(poly)},
                "geometry": {"type": "Polygon", "coordinates": poly.to_geojson()},
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def elements_from_geojson(doc: dict) -> list[tuple[int, Polygon]]:
    out = []
    for f in doc["features"]:
        coords = f["geometry"]["coordinates"]
        out.append((int(f["properties"]["id"]), Polygon.from_geojson(coords, validate=False)))
    out.sort(key=lambda e: e[0])
    return out


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --- time handling -------------------------------------------------------------


def time_span(records: RecordTable, cfg: PipelineConfig) -> tuple[float, float]:
    """Configured span, or whole UTC days covering the records."""
    if cfg.t0 and cfg.t_end:
        return parse_time(cfg.t0), parse_time(cfg.t_end)
    if len(records) == 0:
        raise ValueError("no records to infer the time span from")
    t0 = parse_time(cfg.t0) if cfg.t0 else math.floor(records.t.min() / 86400) * 86400.0
    t_end = parse_time(cfg.t_end) if cfg.t_end else t0 + math.ceil((records.t.max() + 1 - t0) / 86400) * 86400.0
    return t0, t_end


def split_index(T: int, steps_per_day: int) -> tuple[int, int]:
    """(end of train, end of validation); the test window is the rest."""
    train = int(round(T * TRAIN_FRAC))
    valid = int(round(T * (TRAIN_FRAC + VALID_FRAC)))
    if train < 2 * steps_per_day:
        raise ValueError("training window shorter than two days")
    return train, valid


# --- optimization ----------------------------------------------------------------


@dataclass
class Prepared:
    element_ids: list
    polygons: list
    areas: np.ndarray
    vs_cells: np.ndarray
    ts_cells: np.ndarray
    demand_all: np.ndarray  # T x N for retained elements
    train_end: int
    recall: float
    standalone: list
    movable: list
    edges: list
    steps_per_day: int


def prepare(elements, records: RecordTable, cfg: PipelineConfig, obstacles=()) -> Prepared:
    """Bin demand, compute service areas, filter, mark standalone, build edges."""
    t0, t_end = time_span(records, cfg)
    polys = [p for _, p in elements]
    dm, unassigned = bin_records(records, polys, cfg.interval_s, t0, t_end)
    if unassigned:
        log.info("%d records fall in no element or outside the span", unassigned)
    spd = dm.steps_per_day
    train_end, _ = split_index(dm.T, spd)
    train_t = t0 + train_end * cfg.interval_s
    hist = records.where(records.t < train_t)
    vs, ts = geohash_service_counts(polys, hist.lat, hist.lon, cfg.geohash_precision)
    atoms = []
    for j, (eid, poly) in enumerate(elements):
        area = polygon_area_km2(poly)
        series = dm.values[:train_end, j]
        rho = acf_fast(series, cfg.lag)
        undefined = not np.any(series - series.mean())
        atoms.append(AtomicElement(eid, poly, area, area * vs[j] / ts[j], series, None if undefined else rho))
    kept, recall = filter_elements(atoms, cfg.alpha, spd)
    keep_ids = {a.id for a in kept}
    idx = [j for j, (eid, _) in enumerate(elements) if eid in keep_ids]
    standalone = mark_standalone(kept, cfg.max_area, cfg.acf_threshold)
    g = build_edges(kept, standalone, cfg.tau_m, obstacles)
    return Prepared(
        element_ids=[elements[j][0] for j in idx],
        polygons=[elements[j][1] for j in idx],
        areas=np.array([atoms[j].ts_km2 for j in idx]),
        vs_cells=vs[idx],
        ts_cells=ts[idx],
        demand_all=dm.values[:, idx],
        train_end=train_end,
        recall=recall,
        standalone=sorted(standalone),
        movable=[e for e in (elements[j][0] for j in idx) if e not in standalone],
        edges=sorted(g.edges),
        steps_per_day=spd,
    )


def make_problem(prep: Prepared, cfg: PipelineConfig) -> ClusteringProblem:
    pos = {eid: k for k, eid in enumerate(prep.movable)}
    col = {eid: j for j, eid in enumerate(prep.element_ids)}
    cols = [col[e] for e in prep.movable]
    edges = [(pos[u], pos[v]) for u, v in prep.edges]
    return ClusteringProblem(
        adjacency_from_edges(len(prep.movable), edges),
        prep.demand_all[: prep.train_end, cols],
        prep.vs_cells[cols],
        prep.ts_cells[cols],
        prep.areas[cols],
        cfg.max_area,
        cfg.lag,
    )


@dataclass
class OptimizeResult:
    prep: Prepared
    problem: ClusteringProblem
    M: int
    fallback: bool
    pareto: ParetoSet
    initial: list
    seconds: float = 0.0


def initial_solutions(problem: ClusteringProblem, M: int, cfg: PipelineConfig) -> list[ClusterSolution]:
    """D-Balance, greedy and fluid solutions over several seeds, repaired."""
    out = []
    w = problem.weights
    for k in range(cfg.init_seeds):
        s = cfg.seed + k
        makers = (
            lambda: d_balance(problem.adj, w, M, cfg.imbalance, seed=s, areas=problem.area, max_area=problem.max_area),
            lambda: greedy_grow(problem, M, cfg.lam, seed=s),
            lambda: fluid_grow(problem.adj, M, seed=s),
        )
        for make in makers:
            try:
                sol = make()
            except InfeasibleM:
                continue
            sol.assignment = repair(sol.assignment, problem.adj, M, w, problem.area, problem.max_area)
            rep = check_feasible(sol.assignment, problem.adj, problem.area, problem.max_area, M)
            sol.feasible, sol.violations = rep.ok, rep.violations
            out.append(sol)
    return out


def optimize(prep: Prepared, cfg: PipelineConfig) -> OptimizeResult:
    start = time.perf_counter()
    problem = make_problem(prep, cfg)
    opt_cfg = OptimizerConfig(w=cfg.w, max_epochs=cfg.eps, seed=cfg.seed, tau_m=cfg.tau_m)
    if problem.n == 0:
        empty = ParetoSet([ClusterSolution(np.zeros(0, dtype=np.int64), 0, 0.0, 0.0, True, [])])
        return OptimizeResult(prep, problem, 0, False, empty, [], time.perf_counter() - start)
    w = problem.weights

    def fast(M):
        return d_balance(problem.adj, w, M, cfg.imbalance, seed=cfg.seed, tries=2, areas=problem.area, max_area=problem.max_area)

    est = estimate_cluster_scale(problem.adj, problem.area, problem.max_area, fast)
    M = est.M
    initial = [est.solution]
    if not est.fallback:
        initial += initial_solutions(problem, M, cfg)
    feasible = [s for s in initial if check_feasible(s.assignment, problem.adj, problem.area, problem.max_area, M).ok]
    if not feasible:
        raise InfeasibleOptimization("no feasible initial solution at the estimated scale")
    pareto = co_optimize(feasible, opt_cfg, problem)
    return OptimizeResult(prep, problem, M, est.fallback, pareto, initial, time.perf_counter() - start)


def full_assignment(res: OptimizeResult, sol: ClusterSolution) -> dict:
    """Element id -> region id; standalone elements become trailing singletons."""
    out = {eid: int(c) for eid, c in zip(res.prep.movable, sol.assignment.tolist())}
    for k, eid in enumerate(res.prep.standalone):
        out[eid] = sol.M + k
    return out


def region_members(assign: dict) -> list[list[int]]:
    K = max(assign.values()) + 1 if assign else 0
    members = [[] for _ in range(K)]
    for eid in sorted(assign):
        members[assign[eid]].append(eid)
    return members


def _region_stats(prep: Prepared, members: list[list[int]]):
    col = {eid: j for j, eid in enumerate(prep.element_ids)}
    train = prep.demand_all[: prep.train_end]
    rows = []
    for rid, mem in enumerate(members):
        cols = [col[e] for e in mem]
        s = train[:, cols].sum(axis=1)
        try:
            rho = acf(s, prep.steps_per_day)
        except ZeroVariance:
            rho = None
        vs = float(prep.vs_cells[cols].sum())
        ts = float(prep.ts_cells[cols].sum())
        rows.append(
            {
                "region_id": rid,
                "members": [int(e) for e in mem],
                "acf_daily": rho,
                "specificity": vs / ts if ts > 0 else None,
                "area_km2": float(prep.areas[cols].sum()),
                "mean_daily_demand": float(s.mean() * prep.steps_per_day),
            }
        )
    return rows


def regions_geojson(prep: Prepared, members: list[list[int]], meta: dict | None = None) -> dict:
    poly = dict(zip(prep.element_ids, prep.polygons))
    feats = []
    for props, mem in zip(_region_stats(prep, members), members):
        geom = {"type": "MultiPolygon", "coordinates": [poly[e].to_geojson() for e in mem]}
        feats.append({"type": "Feature", "properties": props, "geometry": geom})
    doc = {"type": "FeatureCollection", "features": feats}
    if meta:
        doc["properties"] = meta
    return doc


def pareto_json(res: OptimizeResult) -> list[dict]:
    ids = [int(e) for e in res.prep.movable]
    out = []
    for sol in sorted(res.pareto.solutions, key=lambda s: (-s.f1, -s.f2)):
        rec = sol.to_json()
        rec["element_ids"] = ids
        rec["standalone"] = [int(e) for e in res.prep.standalone]
        out.append(rec)
    return out


def write_optimize_outputs(res: OptimizeResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best_acf = res.pareto.best_acf()
    best_spec = res.pareto.best_specificity()
    meta = {"M": res.M, "standalone": len(res.prep.standalone), "scale_fallback": res.fallback}
    paths = {
        "regions": out / "regions.geojson",
        "regions_best_specificity": out / "regions_best_specificity.geojson",
        "pareto": out / "pareto.json",
        "trace": out / "trace.csv",
    }
    write_json(paths["regions"], regions_geojson(res.prep, region_members(full_assignment(res, best_acf)), dict(meta, solution="best_acf")))
    write_json(
        paths["regions_best_specificity"],
        regions_geojson(res.prep, region_members(full_assignment(res, best_spec)), dict(meta, solution="best_specificity")),
    )
    with open(paths["pareto"], "w") as fh:
        json.dump(pareto_json(res), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    write_trace_csv(paths["trace"], res.pareto.trace)
    return paths


# --- evaluation --------------------------------------------------------------------


def grid_members(prep: Prepared, count: int) -> list[list[int]]:
    """Equal-count grid baseline: elements grouped by the grid cell holding their centroid.

    The grid shape is the one whose number of nonempty cells is closest to
    ``count``, preferring square cells.
    """
    cent = np.array([p.centroid() for p in prep.polygons])
    lon0, lat0 = cent.min(axis=0)
    lon1, lat1 = cent.max(axis=0)
    span_x = max((lon1 - lon0) * math.cos(math.radians((lat0 + lat1) / 2)), 1e-12)
    span_y = max(lat1 - lat0, 1e-12)
    best = None
    top = int(math.ceil(math.sqrt(count))) * 3 + 2
    for nx in range(1, top):
        for ny in range(1, top):
            ix = np.minimum(((cent[:, 0] - lon0) / max(lon1 - lon0, 1e-12) * nx).astype(int), nx - 1)
            iy = np.minimum(((cent[:, 1] - lat0) / max(lat1 - lat0, 1e-12) * ny).astype(int), ny - 1)
            cells = iy * nx + ix
            nonempty = len(np.unique(cells))
            aspect = abs(math.log((span_x / nx) / (span_y / ny)))
            key = (abs(nonempty - count), aspect, nx, ny)
            if best is None or key < best[0]:
                best = (key, cells)
    cells = best[1]
    order = {c: k for k, c in enumerate(sorted(set(cells.tolist())))}
    members = [[] for _ in order]
    for eid, c in zip(prep.element_ids, cells.tolist()):
        members[order[c]].append(eid)
    return members


@dataclass
class MethodScore:
    method: str
    regions: int
    mean_acf: float
    mean_specificity: float
    mape: float
    recall: float
    rows: list = field(default_factory=list)

    @property
    def label(self) -> str:
        return recall_label(self.recall)


def score_partition(prep: Prepared, members: list[list[int]], method: str, cfg: PipelineConfig) -> MethodScore:
    """ACF and specificity on the training window, seasonal-naive MAPE on the test window."""
    rows = _region_stats(prep, members)
    col = {eid: j for j, eid in enumerate(prep.element_ids)}
    S = np.column_stack([prep.demand_all[:, [col[e] for e in mem]].sum(axis=1) for mem in members])
    T = S.shape[0]
    _, valid_end = split_index(T, prep.steps_per_day)
    horizon = T - valid_end
    pred = seasonal_naive_predict(S, horizon, prep.steps_per_day)
    mape, recall, _ = mape_at_recall(S[valid_end:], pred, cfg.min_daily_demand, prep.steps_per_day)
    acfs = [r["acf_daily"] if r["acf_daily"] is not None else 0.0 for r in rows]
    specs = [r["specificity"] or 0.0 for r in rows]
    for r in rows:
        r["method"] = method
        r["cluster_id"] = r["region_id"]
    return MethodScore(method, len(members), float(np.mean(acfs)), float(np.mean(specs)), mape, recall, rows)


def evaluate(prep: Prepared, members: list[list[int]], cfg: PipelineConfig) -> list[MethodScore]:
    ours = score_partition(prep, members, "regiongen", cfg)
    grid = score_partition(prep, grid_members(prep, len(members)), "grid", cfg)
    return [ours, grid]


SUMMARY_HEADER = ["method", "regions", "mean_acf_daily", "mean_specificity", "mape", "recall", "label"]


def write_evaluation(scores: list[MethodScore], out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for s in scores for r in s.rows]
    write_metrics_csv(out / "metrics.csv", rows, extra_fields=("method",))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in scores:
            w.writerow([s.method, s.regions, repr(s.mean_acf), repr(s.mean_specificity), repr(s.mape), repr(s.recall), s.label])
    return {"metrics": out / "metrics.csv", "summary": out / "summary.csv"}


def members_from_regions(doc: dict) -> list[list[int]]:
    feats = sorted(doc["features"], key=lambda f: f["properties"]["region_id"])
    return [list(map(int, f["properties"]["members"])) for f in feats]


# --- whole run -------------------------------------------------------------------------


def run_all(roads, obstacles, records: RecordTable, cfg: PipelineConfig, out_dir, bbox=None) -> dict:
    """Segment, optimize, evaluate; writes every artifact into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    elements = segment_city(roads, obstacles, cfg, bbox)
    write_json(out / "elements.geojson", elements_to_geojson(elements))
    prep = prepare(elements, records, cfg, obstacles)
    res = optimize(prep, cfg)
    paths = write_optimize_outputs(res, out)
    members = region_members(full_assignment(res, res.pareto.best_acf()))
    scores = evaluate(prep, members, cfg)
    paths.update(write_evaluation(scores, out))
    paths["elements"] = out / "elements.geojson"
    return {"paths": paths, "result": res, "scores": scores, "elements": elements}


# --- scalability ---------------------------------------------------------------------


def grid_elements(bbox, n_side: int) -> list[tuple[int, Polygon]]:
    lon0, lat0, lon1, lat1 = bbox
    xs = np.linspace(lon0, lon1, n_side + 1)
    ys = np.linspace(lat0, lat1, n_side + 1)
    out = []
    for r in range(n_side):
        for c in range(n_side):
            out.append((r * n_side + c, Polygon.box(xs[c], ys[r], xs[c + 1], ys[r + 1])))
    return out


SCALABILITY_HEADER = ["n_elements", "movable", "M", "seconds", "epochs", "converge_epoch", "iterations", "pareto_size", "best_acf", "best_specificity"]


def converge_epoch(trace) -> int:
    """Epoch of the last improvement of either running best."""
    last = 0
    prev = None
    for epoch, _, _, ba, bs in trace:
        if prev is None or ba > prev[0] or bs > prev[1]:
            last = epoch
        prev = (ba, bs)
    return last


def scalability(records: RecordTable, bbox, sizes: Sequence[int], cfg: PipelineConfig) -> list[dict]:
    """Full optimization with square grid cells as elements at each size."""
    rows = []
    for n in sizes:
        side = int(round(math.sqrt(n)))
        if side * side != n:
            raise ValueError(f"size {n} is not a perfect square")
        elements = grid_elements(bbox, side)
        start = time.perf_counter()
        prep = prepare(elements, records, cfg)
        res = optimize(prep, cfg)
        secs = time.perf_counter() - start
        rows.append(
            {
                "n_elements": n,
                "movable": len(prep.movable),
                "M": res.M,
                "seconds": secs,
                "epochs": res.pareto.evaluations,
                "converge_epoch": converge_epoch(res.pareto.trace),
                "iterations": res.pareto.iterations,
                "pareto_size": len(res.pareto.solutions),
                "best_acf": res.pareto.best_acf().f1,
                "best_specificity": res.pareto.best_specificity().f2,
            }
        )
        log.info("scalability n=%d: %.1fs, %d epochs", n, secs, res.pareto.evaluations)
    return rows


def write_rows_csv(path, rows: list[dict], header: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def span_strings(t0: float, t_end: float) -> tuple[str, str]:
    return format_time(t0), format_time(t_end)
