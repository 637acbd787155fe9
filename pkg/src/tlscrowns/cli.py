"""Command line entry point: ``tlscrowns <subcommand> ...``.

Exit codes: 0 success, 1 domain error (e.g. undefined metrics), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .experiment import GridSearchSpec, run_gridsearch, select_best, summarize_labels
from .geom import BBox
from .ingest import read_plot_dir, write_tree_xyz
from .labelgen import (
    LabelGenConfig,
    apply_corrections,
    label_plot,
    read_corrections,
    read_labels,
    write_labels,
)
from .metrics import EvalConfig, UndefinedMetricError, evaluate
from .predictions import (
    TilingConfig,
    clip_detection,
    group_by_tile,
    merge_tiled,
    read_detections,
    write_detections_csv,
)
from .raster_io import write_ascii_grid
from .reports import emit_gridsearch, emit_result, rebuild_from_json, write_summaries
from .synth import SynthSceneConfig, generate_scene, perturb_to_detections, tile_duplicates

logger = logging.getLogger("tlscrowns")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"


class DomainError(Exception):
    """Inputs are valid but the requested quantity does not exist."""


# --- argument helpers --------------------------------------------------------


def _floats(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one number")
    return vals


def _pair(text: str):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers 'low,high', got {text!r}")
    return tuple(vals)


def _extent(text: str) -> BBox:
    vals = _floats(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("plot extent is minx,miny,maxx,maxy")
    try:
        return BBox(*vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _min_tile(text: str):
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--min-tile-size is 'auto' or metres")


# --- manifest ----------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digests(paths: Sequence[Optional[str]]) -> Dict[str, str]:
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = _sha256(f)
    return out


def _jsonable(v):
    if isinstance(v, BBox):
        return list(v.as_tuple())
    if isinstance(v, tuple):
        return list(v)
    return v


def write_manifest(out_dir: Path, args: argparse.Namespace, inputs: Sequence[Optional[str]],
                   extra: Optional[dict] = None) -> Path:
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items())
              if k not in ("func", "frozen_time", "verbose")}
    stamp = args.frozen_time or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc = {"command": args.command, "config": config, "inputs": _digests(inputs),
           "version": __version__, "timestamp": stamp}
    if extra:
        doc.update(extra)
    path = out_dir / MANIFEST
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -------------------------------------------------------------


def cmd_labelgen(args) -> int:
    cfg = LabelGenConfig(args.resolution, args.fill_window)
    plot = read_plot_dir(args.input)
    run = label_plot(plot, cfg, threads=args.threads)
    labels = run.labels
    if args.corrections:
        shift, per_crown = read_corrections(args.corrections)
        labels = apply_corrections(labels, shift, per_crown)
    out = _out_dir(args.output)
    write_labels(labels, out / "labels.geojson")
    if args.emit_rasters:
        g = run.mosaic.grid
        write_ascii_grid(out / "height.asc", g, run.mosaic.height_band)
        write_ascii_grid(out / "index.asc", g, run.mosaic.index_band, nodata=-1, integer=True)
    write_manifest(out, args, [args.input, args.corrections],
                   {"omitted_trees": run.omitted, "n_labels": len(labels)})
    print(f"{len(labels)} crown labels written to {out / 'labels.geojson'}"
          f" ({len(run.omitted)} tree(s) not visible from above)")
    return EXIT_OK


def _eval_config(args) -> EvalConfig:
    return EvalConfig(tuple(args.iou), args.canopy_fraction, args.coverage_fraction)


def cmd_evaluate(args) -> int:
    labels = read_labels(args.labels)
    dets = read_detections(args.detections)
    if args.nms_iou is not None:
        tile = args.tile_size if args.tile_size is not None else float("inf")
        tcfg = TilingConfig(tile, args.nms_iou, args.overlap, args.gsd, args.nms_scope)
        groups = group_by_tile(dets) if args.nms_scope == "tile" else [(None, dets)]
        dets = merge_tiled(groups, tcfg, args.plot_extent)
    elif args.plot_extent is not None:
        dets = [c for c in (clip_detection(d, args.plot_extent) for d in dets) if c is not None]
    result = evaluate(dets, labels, _eval_config(args))
    out = _out_dir(args.output)
    emit_result(result, out, args.site, args.model, args.tile_size, args.nms_iou)
    write_manifest(out, args, [args.labels, args.detections])
    for stratum, by_iou in result.strata.items():
        for iou, s in by_iou.items():
            ap = "undefined" if s.ap is None else f"{s.ap:.6f}"
            print(f"{stratum:7s} AP{round(iou * 100)} = {ap}  (n_gt={s.n_gt}, n_det={s.n_det})")
    if not result.get("all", result.config.iou_thresholds[0]).defined:
        raise DomainError("undefined metrics: the labels contain no ground-truth crowns")
    return EXIT_OK


_CELL_FILE = re.compile(r"^tile(?P<tile>[0-9.]+)(?:_nms(?P<nms>[0-9.]+))?$")


def _read_cell_dir(path: Path) -> dict:
    """``tile<T>_nms<N>.csv`` holds final detections, ``tile<T>.csv`` raw ones."""
    sets = {}
    for f in sorted(path.iterdir()):
        if f.suffix.lower() not in (".csv", ".json", ".geojson"):
            continue
        m = _CELL_FILE.match(f.stem)
        if not m:
            continue
        key = float(m["tile"]) if m["nms"] is None else (float(m["tile"]), float(m["nms"]))
        sets[key] = read_detections(f)
    if not sets:
        raise FileNotFoundError(f"{path}: no tile<T>[_nms<N>] detection files found")
    return sets


def cmd_gridsearch(args) -> int:
    labels = read_labels(args.labels)
    src = Path(args.detections)
    dets = _read_cell_dir(src) if src.is_dir() else read_detections(src)
    grid = GridSearchSpec(tuple(args.tile_sizes), tuple(args.nms_ious), args.gsd)
    cells = run_gridsearch(dets, labels, grid, _eval_config(args), args.plot_extent,
                           args.overlap, args.nms_scope, args.threads)
    out = _out_dir(args.output)
    try:
        best = select_best(cells, args.min_tile_size, labels)
    except ValueError as exc:
        emit_gridsearch(cells, out, None, args.site, args.model, args.min_tile_size)
        write_manifest(out, args, [args.labels, args.detections])
        raise DomainError(str(exc))
    emit_gridsearch(cells, out, best, args.site, args.model, args.min_tile_size)
    write_manifest(out, args, [args.labels, args.detections],
                   {"best": [best.tile_size, best.nms_iou]})
    print(f"best cell: tile {best.tile_size:g}, NMS IoU {best.nms_iou:g}, "
          f"AP50 {best.ap50():.6f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    summaries = []
    for path in args.labels:
        labels = read_labels(path)
        plot_id = Path(path).stem if len(args.labels) > 1 or args.plot_id is None else args.plot_id
        if not labels:
            raise DomainError(f"{path}: no labels to summarise")
        summaries.append(summarize_labels(labels, plot_id, args.gsd,
                                          tuple(args.ortho_dims) if args.ortho_dims else None))
    out = _out_dir(args.output)
    write_summaries(summaries, out / "summary.csv")
    write_manifest(out, args, list(args.labels))
    for s in summaries:
        print(s.table_row())
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthSceneConfig(args.seed, args.n_trees, args.plot_side, args.shape,
                           args.height_range, args.radius_range, args.points_per_tree,
                           args.overlap, args.crown_depth_fraction, args.stem_points)
    plot, truth = generate_scene(cfg)
    out = _out_dir(args.output)
    clouds = out / "clouds"
    clouds.mkdir(exist_ok=True)
    for old in clouds.glob("*.xyz"):
        old.unlink()
    for t in plot.trees:
        write_tree_xyz(t, clouds / f"{t.tree_id}.xyz")
    labels = label_plot(plot, LabelGenConfig(args.resolution, args.fill_window)).labels
    dets, book = perturb_to_detections(labels, args.seed, args.tp_rate, args.fp_count,
                                       args.jitter, args.conf_model, extent=plot.extent)
    write_detections_csv(dets, out / "detections.csv")
    doc = {"scene": truth.to_dict(), "detections": book.to_dict(),
           "visible_trees": [lab.tree_id for lab in labels]}
    if args.tile_size is not None:
        tcfg = TilingConfig(args.tile_size, 0.5, args.tile_overlap)
        raw = tile_duplicates(dets, plot.extent, tcfg, args.seed)
        write_detections_csv(raw, out / "detections_raw.csv", with_tile=True)
        doc["raw_tiling"] = {"tile_size": args.tile_size, "overlap": args.tile_overlap}
    (out / "truth.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    write_manifest(out, args, [])
    print(f"scene with {len(plot.trees)} trees ({plot.n_points} points) written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    doc, payload = rebuild_from_json(args.report)
    out = _out_dir(args.output)
    if doc["kind"] == "evaluation":
        emit_result(payload, out, doc["site"], doc["model"], doc["tile_size"], doc["nms_iou"])
    else:
        best = None
        if doc.get("best") is not None:
            t, n = doc["best"]
            best = next(c for c in payload if c.tile_size == t and c.nms_iou == n)
        emit_gridsearch(payload, out, best, doc["site"], doc["model"], doc.get("min_tile_size"))
    write_manifest(out, args, [args.report])
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_eval_flags(p):
    p.add_argument("--iou", type=_floats, default=[0.5, 0.75],
                   help="matching IoU thresholds (default 0.5,0.75)")
    p.add_argument("--canopy-fraction", type=float, default=0.75)
    p.add_argument("--coverage-fraction", type=float, default=0.5)
    p.add_argument("--plot-extent", type=_extent, default=None,
                   help="minx,miny,maxx,maxy; detections are clipped to it after NMS")
    p.add_argument("--nms-scope", choices=("global", "tile"), default="global")
    p.add_argument("--overlap", type=float, default=0.5, help="tile overlap fraction")
    p.add_argument("--gsd", type=float, default=None,
                   help="metres per pixel; tile sizes are then in pixels")
    p.add_argument("--site", default="")
    p.add_argument("--model", default="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlscrowns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--frozen-time", default=None,
                        help="fixed manifest timestamp, for reproducible output")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("labelgen", parents=[common], help="crown labels from a segmented plot")
    p.add_argument("input", help="directory of <tree_id>.xyz files or a plot CSV")
    p.add_argument("--resolution", type=float, default=0.02)
    p.add_argument("--fill-window", type=int, default=1)
    p.add_argument("--corrections", default=None, help="tree_id,dx,dy CSV ('*' = global)")
    p.add_argument("--emit-rasters", action="store_true", help="write height.asc and index.asc")
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("evaluate", parents=[common], help="score detections against labels")
    p.add_argument("labels")
    p.add_argument("detections")
    p.add_argument("--nms-iou", type=float, default=None,
                   help="merge the detections with NMS at this IoU first")
    p.add_argument("--tile-size", type=float, default=None, help="reported tile size")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", parents=[common], help="tile size x NMS IoU gridsearch")
    p.add_argument("labels")
    p.add_argument("detections", help="pooled detections file or a per-cell directory")
    p.add_argument("--tile-sizes", type=_floats, required=True)
    p.add_argument("--nms-ious", type=_floats, required=True)
    p.add_argument("--min-tile-size", type=_min_tile, default=None,
                   help="'auto' (largest label side, default) or metres; 0 disables")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("stats", parents=[common], help="per-plot label statistics")
    p.add_argument("labels", nargs="+")
    p.add_argument("--plot-id", default=None)
    p.add_argument("--gsd", type=float, default=None, help="orthomosaic metres per pixel")
    p.add_argument("--ortho-dims", type=int, nargs=2, default=None, metavar=("W", "H"))
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", parents=[common], help="synthetic plot with detections")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trees", type=int, default=5)
    p.add_argument("--plot-side", type=float, default=10.0)
    p.add_argument("--shape", choices=("cone", "paraboloid"), default="cone")
    p.add_argument("--height-range", type=_pair, default=(8.0, 20.0))
    p.add_argument("--radius-range", type=_pair, default=(0.6, 1.5))
    p.add_argument("--points-per-tree", type=int, default=4000)
    p.add_argument("--stem-points", type=int, default=50)
    p.add_argument("--overlap", type=float, default=0.5, help="crown overlap intensity")
    p.add_argument("--crown-depth-fraction", type=float, default=0.5)
    p.add_argument("--resolution", type=float, default=0.02)
    p.add_argument("--fill-window", type=int, default=1)
    p.add_argument("--tp-rate", type=float, default=0.8)
    p.add_argument("--fp-count", type=int, default=2)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--conf-model", choices=("separated", "uniform"), default="separated")
    p.add_argument("--tile-size", type=float, default=None,
                   help="also write tile-tagged duplicates to detections_raw.csv")
    p.add_argument("--tile-overlap", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", parents=[common], help="re-emit reports from report JSON")
    p.add_argument("report", help="report.json or gridsearch.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (DomainError, UndefinedMetricError) as exc:
        print(f"tlscrowns: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError, KeyError) as exc:
        print(f"tlscrowns: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
