"""Tile-size x NMS-IoU gridsearch, best-cell selection and plot statistics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

from .metrics import EvalConfig, EvalResult, evaluate
from .predictions import (
    Detection,
    TilingConfig,
    clip_detection,
    group_by_tile,
    merge_tiled,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSearchSpec:
    """Grid axes. Tile sizes are metres, or pixels when ``gsd`` is set."""

    tile_sizes: Tuple[float, ...]
    nms_ious: Tuple[float, ...]
    gsd: Optional[float] = None

    def __post_init__(self):
        if not self.tile_sizes or not self.nms_ious:
            raise ValueError("gridsearch needs at least one tile size and one NMS IoU")
        for t in self.tile_sizes:
            if not t > 0:
                raise ValueError(f"tile size must be positive, got {t}")
        for v in self.nms_ious:
            if not 0.0 < v < 1.0:
                raise ValueError(f"NMS IoU must lie in (0, 1), got {v}")
        object.__setattr__(self, "tile_sizes", tuple(float(t) for t in self.tile_sizes))
        object.__setattr__(self, "nms_ious", tuple(float(v) for v in self.nms_ious))

    def cells(self) -> List[Tuple[float, float]]:
        return [(t, n) for t in self.tile_sizes for n in self.nms_ious]

    def tile_size_m(self, tile_size: float) -> float:
        return tile_size * self.gsd if self.gsd is not None else tile_size


@dataclass(frozen=True, eq=False)
class GridCell:
    tile_size: float
    nms_iou: float
    result: Optional[EvalResult]
    tile_size_m: float
    n_detections: Optional[int] = None

    @property
    def present(self) -> bool:
        return self.result is not None

    def ap50(self) -> Optional[float]:
        if self.result is None:
            return None
        return self.result.ap("all", 0.5)


DetectionInput = Union[Sequence[Detection], Mapping]


def _cell_detections(detections, tile_size, nms_iou, plot, overlap, gsd, scope):
    """Detections for one cell, or None when the cell has no input."""
    if isinstance(detections, Mapping):
        key = (tile_size, nms_iou)
        if key in detections:
            dets = list(detections[key])
            if plot is None:
                return dets
            return [c for c in (clip_detection(d, plot) for d in dets) if c is not None]
        if tile_size not in detections:
            return None
        raw = list(detections[tile_size])
    else:
        raw = list(detections)
    cfg = TilingConfig(tile_size, nms_iou, overlap, gsd, scope)
    groups = group_by_tile(raw) if scope == "tile" else [(None, raw)]
    return merge_tiled(groups, cfg, plot)


def run_gridsearch(detections: DetectionInput, labels: Sequence, grid: GridSearchSpec,
                   cfg: EvalConfig = EvalConfig(), plot=None, overlap: float = 0.5,
                   nms_scope: str = "global", threads: int = 1) -> List[GridCell]:
    """Evaluate every ``(tile_size, nms_iou)`` cell.

    ``detections`` is one of:

    * a list of raw (pre-NMS) detections shared by every tile size,
    * a mapping ``tile_size -> raw detections`` (per-tile-size inference runs),
    * a mapping ``(tile_size, nms_iou) -> final detections`` (already merged).

    Raw detections are merged per cell with that cell's NMS IoU and clipped to
    ``plot``. Cells without input come back with ``result=None``.
    """

    def run(cell):
        tile, iou = cell
        dets = _cell_detections(detections, tile, iou, plot, overlap, grid.gsd, nms_scope)
        if dets is None:
            logger.warning("no detections for cell tile=%g nms=%g", tile, iou)
            return GridCell(tile, iou, None, grid.tile_size_m(tile))
        return GridCell(tile, iou, evaluate(dets, labels, cfg), grid.tile_size_m(tile), len(dets))

    cells = grid.cells()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def largest_label_side(labels: Sequence) -> float:
    return max(max(lab.bbox.width, lab.bbox.height) for lab in labels)


def select_best(cells: Sequence[GridCell], min_tile_size: Optional[float] = None,
                labels: Optional[Sequence] = None) -> GridCell:
    """Cell with the best all-tree AP50 among tiles large enough for every crown.

    ``min_tile_size`` (metres) defaults to the longest label bbox side when
    ``labels`` are given, else 0. Ties prefer the larger tile, then the lower
    NMS IoU.
    """
    if min_tile_size is None:
        min_tile_size = largest_label_side(labels) if labels else 0.0
    eligible = [c for c in cells if c.present and c.ap50() is not None
                and c.tile_size_m >= min_tile_size]
    if not eligible:
        if not any(c.present for c in cells):
            raise ValueError("every gridsearch cell is absent")
        raise ValueError(f"no cell with a defined AP50 and tile size >= {min_tile_size:g} m")
    return min(eligible, key=lambda c: (-c.ap50(), -c.tile_size_m, c.nms_iou))


@dataclass(frozen=True)
class PlotSummary:
    plot_id: str
    total_crowns: int
    max_crown_area: float
    avg_crown_area: float
    ortho_dims: Optional[Tuple[int, int]] = None
    gsd: Optional[float] = None  # metres per pixel

    def table_row(self) -> str:
        """LaTeX-style row: ``plot & crowns & max / avg [& dims & gsd_cm]``."""
        parts = [self.plot_id, str(self.total_crowns),
                 f"{self.max_crown_area:.1f} / {self.avg_crown_area:.1f}"]
        if self.ortho_dims is not None:
            parts.append(f"{self.ortho_dims[0]}$\\times${self.ortho_dims[1]}")
        if self.gsd is not None:
            if self.ortho_dims is None:
                parts.append("")
            parts.append(f"{self.gsd * 100:.1f}")
        return " & ".join(parts)


def summarize_labels(labels: Sequence, plot_id: str, gsd: Optional[float] = None,
                     ortho_dims: Optional[Tuple[int, int]] = None) -> PlotSummary:
    """Crown count and max/mean footprint area in square metres."""
    if not labels:
        raise ValueError(f"plot {plot_id!r} has no labels to summarise")
    areas = [lab.footprint_area for lab in labels]
    return PlotSummary(plot_id, len(areas), max(areas), sum(areas) / len(areas), ortho_dims, gsd)
