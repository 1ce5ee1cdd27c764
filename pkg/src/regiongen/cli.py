"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 infeasible optimization,
4 input/output error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .ingest import (
    AllRowsMalformed,
    ConfigError,
    FileUnreadable,
    InvalidJson,
    NoRoads,
    PipelineConfig,
    geometry_to_geojson,
    load_config,
    parse_geometry,
    parse_records,
    write_records,
)
from .optimizer import EmptyInitialSet
from .partition import ClusterSolution, NoFeasibleScale
from .synth import InvalidSpec, River, city_spec, roads_and_obstacles, sample_records

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("regiongen")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat TOML file with pipeline settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--w", type=float, help="probability of refining the best-ACF solution")
    p.add_argument("--eps", type=int, help="move-evaluation budget")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regiongen", description="Generate demand-predictable urban regions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="write a synthetic city: geometry.geojson and records.csv")
    _common(p)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--extent-km", type=float, default=4.2)
    p.add_argument("--spacing-m", type=float, default=200.0)
    p.add_argument("--no-river", action="store_true")

    p = sub.add_parser("segment", help="split the city into atomic elements")
    _common(p)
    p.add_argument("--geometry", type=Path, required=True)

    p = sub.add_parser("optimize", help="cluster elements into regions")
    _common(p)
    p.add_argument("--elements", type=Path, required=True)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--geometry", type=Path, help="obstacles used by the graph constraints")

    p = sub.add_parser("evaluate", help="score regions against an equal-count grid")
    _common(p)
    p.add_argument("--regions", type=Path, required=True)
    p.add_argument("--elements", type=Path, required=True)
    p.add_argument("--records", type=Path, required=True)

    p = sub.add_parser("scalability", help="runtime sweep over grid element counts")
    _common(p)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--sizes", default="100,400,1600,6400")

    p = sub.add_parser("export", help="write one Pareto solution as a standalone GeoJSON")
    _common(p)
    p.add_argument("--pareto", type=Path, required=True)
    p.add_argument("--elements", type=Path, required=True)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--solution", default="best-acf", help="best-acf, best-specificity or an index")
    return ap


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(seed=args.seed, w=args.w, eps=args.eps)


def _bbox_of(elements):
    b = [p.bounds for _, p in elements]
    return (min(x[0] for x in b), min(x[1] for x in b), max(x[2] for x in b), max(x[3] for x in b))


def cmd_synth(args, cfg: PipelineConfig) -> int:
    river = None if args.no_river else River()
    spec = city_spec(cfg.seed, days=args.days, extent_km=args.extent_km, road_spacing_m=args.spacing_m, river=river)
    roads, obstacles = roads_and_obstacles(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    pl.write_json(args.out / "geometry.geojson", geometry_to_geojson([r.tolist() for r in roads], obstacles))
    write_records(args.out / "records.csv", sample_records(spec))
    print(f"wrote {args.out / 'geometry.geojson'} and {args.out / 'records.csv'}")
    return EXIT_OK


def _geometry_bbox(geo):
    xs = [c[0] for r in geo.roads for c in r]
    ys = [c[1] for r in geo.roads for c in r]
    return (min(xs), min(ys), max(xs), max(ys))


def cmd_segment(args, cfg) -> int:
    geo = parse_geometry(args.geometry)
    elements = pl.segment_city(geo.roads, geo.obstacles, cfg, cfg.bbox or _geometry_bbox(geo))
    args.out.mkdir(parents=True, exist_ok=True)
    pl.write_json(args.out / "elements.geojson", pl.elements_to_geojson(elements))
    print(f"{len(elements)} elements -> {args.out / 'elements.geojson'}")
    return EXIT_OK


def _load_inputs(args, cfg):
    elements = pl.elements_from_geojson(pl.read_json(args.elements))
    records = parse_records(args.records, bbox=cfg.bbox)
    return elements, records


def cmd_optimize(args, cfg) -> int:
    elements, records = _load_inputs(args, cfg)
    obstacles = parse_geometry(args.geometry).obstacles if args.geometry else []
    prep = pl.prepare(elements, records, cfg, obstacles)
    res = pl.optimize(prep, cfg)
    paths = pl.write_optimize_outputs(res, args.out)
    best = res.pareto.best_acf()
    print(f"M*={res.M} standalone={len(prep.standalone)} pareto={len(res.pareto.solutions)} best_acf={best.f1:.4f}")
    for k, v in paths.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    elements, records = _load_inputs(args, cfg)
    members = pl.members_from_regions(pl.read_json(args.regions))
    keep = {e for m in members for e in m}
    prep = pl.prepare([e for e in elements if e[0] in keep], records, cfg.with_overrides(alpha=0.0))
    scores = pl.evaluate(prep, members, cfg)
    pl.write_evaluation(scores, args.out)
    for s in scores:
        print(f"{s.method}: regions={s.regions} acf={s.mean_acf:.4f} specificity={s.mean_specificity:.4f} {s.label}={s.mape:.4f}")
    return EXIT_OK


def cmd_scalability(args, cfg) -> int:
    records = parse_records(args.records, bbox=cfg.bbox)
    bbox = cfg.bbox or (float(records.lon.min()), float(records.lat.min()), float(records.lon.max()), float(records.lat.max()))
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = pl.scalability(records, bbox, sizes, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    pl.write_rows_csv(args.out / "scalability.csv", rows, pl.SCALABILITY_HEADER)
    for r in rows:
        print(f"N={r['n_elements']}: {r['seconds']:.1f}s epochs={r['epochs']} converge={r['converge_epoch']}")
    return EXIT_OK


def cmd_export(args, cfg) -> int:
    elements, records = _load_inputs(args, cfg)
    recs = pl.read_json(args.pareto)
    if not recs:
        raise EmptyInitialSet("pareto file is empty")
    sols = [ClusterSolution.from_json(r) for r in recs]
    if args.solution == "best-acf":
        k = max(range(len(sols)), key=lambda i: sols[i].f1)
    elif args.solution == "best-specificity":
        k = max(range(len(sols)), key=lambda i: sols[i].f2)
    else:
        k = int(args.solution)
    rec = recs[k]
    assign = {int(e): int(c) for e, c in zip(rec["element_ids"], rec["assignment"])}
    for j, e in enumerate(rec.get("standalone", [])):
        assign[int(e)] = rec["M"] + j
    members = pl.region_members(assign)
    prep = pl.prepare([e for e in elements if e[0] in assign], records, cfg.with_overrides(alpha=0.0))
    doc = pl.regions_geojson(prep, members, {"solution": args.solution, "f1": rec["f1"], "f2": rec["f2"]})
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "export.geojson"
    pl.write_json(path, doc)
    print(f"{len(members)} regions -> {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "scalability": cmd_scalability,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.cmd](args, cfg)
    except (ConfigError, InvalidSpec) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (pl.InfeasibleOptimization, EmptyInitialSet, NoFeasibleScale) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FileUnreadable, InvalidJson, NoRoads, AllRowsMalformed, OSError, json.JSONDecodeError, KeyError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
