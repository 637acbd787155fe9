"""CSV, JSON and SVG report emission.

Every number goes out with fixed 6-decimal formatting and the SVGs are
rendered with a fixed hash salt and no date stamp, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from matplotlib import rcParams
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .experiment import GridCell, select_best
from .metrics import STRATA, EvalResult

UNDEFINED = "undefined"
ABSENT = "absent"

GRIDSEARCH_COLUMNS = ("tile_size", "nms_iou", "stratum", "iou_threshold", "ap",
                      "max_f1", "f1_confidence")
METRICS_COLUMNS = ("site", "model", "tile_size", "nms_iou", "ap50_all", "ap50_canopy",
                   "ap75_all", "ap75_canopy", "f1_all", "f1_canopy")
PR_COLUMNS = ("confidence", "tp", "fp", "precision", "recall")
SUMMARY_COLUMNS = ("plot_id", "total_crowns", "max_crown_area_m2", "avg_crown_area_m2",
                   "ortho_width_px", "ortho_height_px", "gsd_cm_per_px")


def fmt(v) -> str:
    if v is None:
        return UNDEFINED
    return f"{float(v):.6f}"


def _num(text):
    """Inverse of :func:`fmt` (``None`` for undefined/absent)."""
    if text in (UNDEFINED, ABSENT, ""):
        return None
    return float(text)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue())


# --- metrics / PR ------------------------------------------------------------


def metrics_row(result: EvalResult, site="", model="", tile_size=None, nms_iou=None):
    def f1(stratum):
        s = result.strata[stratum].get(0.5)
        return fmt(s.max_f1) if s is not None else UNDEFINED

    def ap(stratum, iou):
        s = result.strata[stratum].get(iou)
        return fmt(s.ap) if s is not None else UNDEFINED

    return [site, model, "" if tile_size is None else f"{tile_size:g}",
            "" if nms_iou is None else f"{nms_iou:g}",
            ap("all", 0.5), ap("canopy", 0.5), ap("all", 0.75), ap("canopy", 0.75),
            f1("all"), f1("canopy")]


def write_pr_files(result: EvalResult, out_dir: Path) -> List[Path]:
    paths = []
    for stratum in STRATA:
        for iou, s in result.strata.get(stratum, {}).items():
            p = out_dir / f"pr_{stratum}_{iou:g}.csv"
            if not s.defined:
                p.write_text(",".join(PR_COLUMNS) + f"\n# {UNDEFINED}: no ground truth in stratum\n")
            else:
                rows = ([fmt(c), str(t), str(f), fmt(pr), fmt(rc)]
                        for c, t, f, pr, rc in s.curve.rows())
                _write_csv(p, PR_COLUMNS, rows)
            paths.append(p)
    return paths


def read_pr_csv(path):
    """Rows of a PR file as tuples, or None when the stratum is undefined."""
    lines = Path(path).read_text().splitlines()
    if len(lines) > 1 and lines[1].startswith(f"# {UNDEFINED}"):
        return None
    rows = list(csv.reader(lines[1:]))
    return [(float(c), int(t), int(f), float(p), float(r)) for c, t, f, p, r in rows]


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {k: r[k] for k in ("site", "model", "tile_size", "nms_iou")}
        for k in METRICS_COLUMNS[4:]:
            d[k] = _num(r[k])
        out.append(d)
    return out


def read_gridsearch_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"tile_size": float(r["tile_size"]), "nms_iou": float(r["nms_iou"]),
             "stratum": r["stratum"] or None, "iou_threshold": _num(r["iou_threshold"]),
             "ap": _num(r["ap"]), "max_f1": _num(r["max_f1"]),
             "f1_confidence": _num(r["f1_confidence"]), "absent": r["ap"] == ABSENT}
            for r in rows]


# --- figures -----------------------------------------------------------------


def _svg_bytes(fig: Figure) -> bytes:
    buf = io.BytesIO()
    FigureCanvasSVG(fig)
    with _fixed_rc():
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


class _fixed_rc:
    def __enter__(self):
        self._saved = {k: rcParams[k] for k in ("svg.hashsalt", "svg.fonttype")}
        rcParams["svg.hashsalt"] = "tlscrowns"
        rcParams["svg.fonttype"] = "none"

    def __exit__(self, *exc):
        rcParams.update(self._saved)


_IOU_COLOURS = {0.5: "tab:red", 0.75: "tab:blue"}


def plot_pr_curves(result: EvalResult, title="") -> bytes:
    """Precision-recall curves: solid for all trees, dashed for canopy."""
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    for stratum, style in (("all", "-"), ("canopy", "--")):
        for iou, s in result.strata.get(stratum, {}).items():
            if not s.defined or len(s.curve) == 0:
                continue
            colour = _IOU_COLOURS.get(iou, "tab:gray")
            ax.plot(s.curve.recall, s.curve.precision, style, color=colour,
                    label=f"{stratum} IoU {iou:g} (AP {s.ap:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(loc="upper right", fontsize="small")
    return _svg_bytes(fig)


def plot_gridsearch(cells: Sequence[GridCell], best: Optional[GridCell] = None, title="") -> bytes:
    """Heatmaps of AP50 per cell with AP50 over AP75 written in each cell."""
    tiles = sorted({c.tile_size for c in cells})
    ious = sorted({c.nms_iou for c in cells})
    fig = Figure(figsize=(2 + 1.2 * len(ious), 2 * (1 + 0.6 * len(tiles))))
    for k, stratum in enumerate(STRATA):
        ax = fig.add_subplot(2, 1, k + 1)
        grid = np.full((len(tiles), len(ious)), np.nan)
        for c in cells:
            i, j = tiles.index(c.tile_size), ious.index(c.nms_iou)
            if c.present:
                a50 = c.result.strata[stratum].get(0.5)
                a75 = c.result.strata[stratum].get(0.75)
                v50 = a50.ap if a50 is not None else None
                v75 = a75.ap if a75 is not None else None
                if v50 is not None:
                    grid[i, j] = v50
                txt = f"{'-' if v50 is None else f'{v50:.3f}'}\n{'-' if v75 is None else f'{v75:.3f}'}"
            else:
                txt = ABSENT
            ax.text(j, i, txt, ha="center", va="center", fontsize=8)
        ax.imshow(np.ma.masked_invalid(grid), cmap="viridis", vmin=0, vmax=1,
                  origin="lower", aspect="auto")
        if best is not None:
            i, j = tiles.index(best.tile_size), ious.index(best.nms_iou)
            ax.add_patch(_rect(j, i))
        ax.set_xticks(range(len(ious)), [f"{v:g}" for v in ious])
        ax.set_yticks(range(len(tiles)), [f"{v:g}" for v in tiles])
        ax.set_xlabel("NMS IoU")
        ax.set_ylabel("Tile size")
        ax.set_title(f"{title} {stratum}".strip())
    fig.tight_layout()
    return _svg_bytes(fig)


def _rect(x, y):
    from matplotlib.patches import Rectangle

    return Rectangle((x - 0.5, y - 0.5), 1, 1, fill=False, edgecolor="lime", linewidth=2)


# --- top level ---------------------------------------------------------------


def _ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not out.is_dir():
        raise OSError(f"output path {out} is not a directory")
    return out


def _dump_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def emit_result(result: EvalResult, out_dir, site="", model="", tile_size=None,
                nms_iou=None) -> List[Path]:
    """Reports for one evaluation: metrics.csv, PR files, report.json, pr_curves.svg."""
    out = _ensure_dir(out_dir)
    _write_csv(out / "metrics.csv", METRICS_COLUMNS,
               [metrics_row(result, site, model, tile_size, nms_iou)])
    paths = [out / "metrics.csv", *write_pr_files(result, out)]
    doc = {"kind": "evaluation", "site": site, "model": model,
           "tile_size": tile_size, "nms_iou": nms_iou, "result": result.to_dict()}
    _dump_json(out / "report.json", doc)
    (out / "pr_curves.svg").write_bytes(plot_pr_curves(result, f"{site} {model}".strip()))
    return paths + [out / "report.json", out / "pr_curves.svg"]


def gridsearch_rows(cells: Sequence[GridCell]):
    for c in cells:
        if not c.present:
            yield [f"{c.tile_size:g}", f"{c.nms_iou:g}", "", "", ABSENT, ABSENT, ABSENT]
            continue
        for stratum in STRATA:
            for iou, s in c.result.strata.get(stratum, {}).items():
                yield [f"{c.tile_size:g}", f"{c.nms_iou:g}", stratum, f"{iou:g}",
                       fmt(s.ap), fmt(s.max_f1), fmt(s.f1_confidence)]


def emit_gridsearch(cells: Sequence[GridCell], out_dir, best: Optional[GridCell] = None,
                    site="", model="", min_tile_size=None) -> List[Path]:
    """gridsearch.csv, gridsearch.svg and gridsearch.json plus the best cell's reports."""
    out = _ensure_dir(out_dir)
    _write_csv(out / "gridsearch.csv", GRIDSEARCH_COLUMNS, gridsearch_rows(cells))
    (out / "gridsearch.svg").write_bytes(plot_gridsearch(cells, best, f"{site} {model}".strip()))
    doc = {
        "kind": "gridsearch", "site": site, "model": model, "min_tile_size": min_tile_size,
        "best": None if best is None else [best.tile_size, best.nms_iou],
        "cells": [{"tile_size": c.tile_size, "nms_iou": c.nms_iou, "tile_size_m": c.tile_size_m,
                   "n_detections": c.n_detections,
                   "result": None if c.result is None else c.result.to_dict()} for c in cells],
    }
    _dump_json(out / "gridsearch.json", doc)
    paths = [out / "gridsearch.csv", out / "gridsearch.svg", out / "gridsearch.json"]
    if best is not None:
        paths += emit_result(best.result, out, site, model, best.tile_size, best.nms_iou)
    return paths


def emit_reports(out_dir, result: Optional[EvalResult] = None,
                 cells: Optional[Sequence[GridCell]] = None, **kw) -> List[Path]:
    """Write every report for either a single evaluation or a gridsearch."""
    if cells is not None:
        best = kw.pop("best", None)
        if best is None and any(c.present for c in cells):
            try:
                best = select_best(cells, kw.get("min_tile_size"))
            except ValueError:
                best = None
        return emit_gridsearch(cells, out_dir, best, **kw)
    if result is None:
        raise ValueError("emit_reports needs a result or gridsearch cells")
    return emit_result(result, out_dir, **kw)


def rebuild_from_json(path):
    """Load a ``report.json`` or ``gridsearch.json`` written by this module."""
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind")
    if kind == "evaluation":
        return doc, EvalResult.from_dict(doc["result"])
    if kind == "gridsearch":
        cells = [GridCell(c["tile_size"], c["nms_iou"],
                          None if c["result"] is None else EvalResult.from_dict(c["result"]),
                          c["tile_size_m"], c.get("n_detections")) for c in doc["cells"]]
        return doc, cells
    raise ValueError(f"{path}: unknown report kind {kind!r}")


def write_summaries(summaries, path) -> None:
    rows = []
    for s in summaries:
        w, h = s.ortho_dims if s.ortho_dims is not None else ("", "")
        rows.append([s.plot_id, str(s.total_crowns), fmt(s.max_crown_area),
                     fmt(s.avg_crown_area), str(w), str(h),
                     "" if s.gsd is None else fmt(s.gsd * 100)])
    _write_csv(Path(path), SUMMARY_COLUMNS, rows)
