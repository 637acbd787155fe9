"""External crown detections: reading, tiling, NMS merging and plot clipping."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .geom import BBox, GeometryError, Polygon, clip_bbox, polygon_bbox

DETECTION_COLUMNS = ("minx", "miny", "maxx", "maxy", "confidence")


class DetectionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float
    footprint: Optional[Polygon] = None
    assigned_height: Optional[float] = None
    tile: Optional[int] = None

    def __post_init__(self):
        c = self.confidence
        if not (isinstance(c, (int, float)) and 0.0 <= c <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {c!r}")
        if self.footprint is not None and not self.bbox.contains(polygon_bbox(self.footprint)):
            raise ValueError("detection footprint extends beyond its bounding box")

    @classmethod
    def from_box(cls, minx, miny, maxx, maxy, confidence, **kw):
        return cls(BBox(minx, miny, maxx, maxy), float(confidence), **kw)


def priority_key(det: Detection):
    """Sort key: confidence descending, then bbox corners ascending."""
    b = det.bbox
    return (-det.confidence, b.minx, b.miny, b.maxx, b.maxy)


def sort_detections(dets: Sequence[Detection]) -> List[int]:
    """Indices of ``dets`` in priority order; input order breaks exact ties."""
    return sorted(range(len(dets)), key=lambda i: (priority_key(dets[i]), i))


@dataclass(frozen=True)
class TilingConfig:
    """Tiling and NMS settings.

    ``tile_size`` is in metres unless ``gsd`` (metres per pixel) is given, in
    which case it is in pixels.
    """

    tile_size: float
    nms_iou: float
    overlap_fraction: float = 0.5
    gsd: Optional[float] = None
    nms_scope: str = "global"

    def __post_init__(self):
        if not self.tile_size > 0:
            raise ValueError("tile_size must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must lie in (0, 1)")
        if self.gsd is not None and not self.gsd > 0:
            raise ValueError("gsd must be positive")
        if self.nms_scope not in ("global", "tile"):
            raise ValueError("nms_scope must be 'global' or 'tile'")

    @property
    def tile_size_m(self) -> float:
        return self.tile_size * self.gsd if self.gsd is not None else self.tile_size


def _axis_starts(lo, hi, size, stride):
    span = hi - lo
    if size >= span:
        return [(lo, hi)]
    starts = []
    k = 0
    # small slack so that 25 + 25 + 50 == 100 counts as reaching the edge
    eps = 1e-9 * max(1.0, abs(span))
    while True:
        s = lo + k * stride
        if s + size > hi + eps:
            break
        starts.append(s)
        k += 1
    last = starts[-1]
    if last + size < hi - eps:
        starts.append(hi - size)
    return [(s, min(s + size, hi)) if abs(s + size - hi) <= eps else (s, s + size)
            for s in starts]


def make_tiles(extent: BBox, cfg: TilingConfig) -> List[BBox]:
    """Overlapping square tiles covering ``extent``, row by row from the min corner.

    Stride is ``tile_size * (1 - overlap)``; the last row and column are
    pulled inward to end exactly on the extent edge.
    """
    size = cfg.tile_size_m
    stride = size * (1.0 - cfg.overlap_fraction)
    xs = _axis_starts(extent.minx, extent.maxx, size, stride)
    ys = _axis_starts(extent.miny, extent.maxy, size, stride)
    return [BBox(x0, y0, x1, y1) for (y0, y1) in ys for (x0, x1) in xs]


def nms(dets: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy non-maximum suppression.

    A detection is kept iff its IoU with every higher-priority kept detection
    is below ``iou_threshold``. Output is in priority order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    order = sort_detections(dets)
    if not order:
        return []
    boxes = np.array([dets[i].bbox.as_tuple() for i in order], dtype=np.float64)
    keep = kernels.nms_keep(boxes, float(iou_threshold))
    return [dets[i] for i, k in zip(order, keep) if k]


def clip_detection(det: Detection, extent: BBox) -> Optional[Detection]:
    clipped = clip_bbox(det.bbox, extent)
    if clipped is None:
        return None
    if clipped == det.bbox:
        return det
    # footprints are not clipped; scoring uses boxes only
    return replace(det, bbox=clipped, footprint=None)


def merge_tiled(per_tile: Iterable[Tuple[Optional[BBox], Sequence[Detection]]],
                cfg: TilingConfig, plot: Optional[BBox] = None) -> List[Detection]:
    """Pool tiled detections, suppress duplicates, then clip to the plot.

    With ``nms_scope='global'`` NMS runs once over the pool. With ``'tile'``
    it runs inside each tile and the survivors are pooled unchanged.
    Clipping comes last, after all other post-processing.
    """
    groups = [list(dets) for _, dets in per_tile]
    if cfg.nms_scope == "global":
        merged = nms([d for g in groups for d in g], cfg.nms_iou)
    else:
        pooled = [d for g in groups for d in nms(g, cfg.nms_iou)]
        merged = [pooled[i] for i in sort_detections(pooled)]
    if plot is None:
        return merged
    out = []
    for d in merged:
        c = clip_detection(d, plot)
        if c is not None:
            out.append(c)
    return out


def group_by_tile(dets: Sequence[Detection]) -> List[Tuple[Optional[int], List[Detection]]]:
    """Split detections on their ``tile`` tag (untagged ones form one group)."""
    groups = {}
    for d in dets:
        groups.setdefault(d.tile, []).append(d)
    return sorted(groups.items(), key=lambda kv: (kv[0] is None, kv[0] if kv[0] is not None else 0))


# --- file formats ------------------------------------------------------------


def _parse_float(text, path, lineno, name):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DetectionFormatError(f"{path}:{lineno}: non-numeric {name} {text!r}") from None
    if not math.isfinite(v):
        raise DetectionFormatError(f"{path}:{lineno}: non-finite {name}")
    return v


def read_detections_csv(path) -> List[Detection]:
    path = Path(path)
    dets = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        missing = [c for c in DETECTION_COLUMNS if c not in header]
        if missing:
            raise DetectionFormatError(f"{path}:1: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in DETECTION_COLUMNS]
        tile_idx = header.index("tile") if "tile" in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) < len(header):
                raise DetectionFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            minx, miny, maxx, maxy, conf = (
                _parse_float(row[i], path, lineno, name) for i, name in zip(idx, DETECTION_COLUMNS))
            if not 0.0 <= conf <= 1.0:
                raise DetectionFormatError(
                    f"{path}:{lineno}: confidence {conf} outside [0, 1]")
            tile = None
            if tile_idx is not None and row[tile_idx].strip():
                tile = int(row[tile_idx])
            try:
                dets.append(Detection(BBox(minx, miny, maxx, maxy), conf, tile=tile))
            except GeometryError as exc:
                raise DetectionFormatError(f"{path}:{lineno}: {exc}") from None
    return dets


def read_detections_geojson(path) -> List[Detection]:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise DetectionFormatError(f"{path}: not a FeatureCollection")
    dets = []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        if "confidence" not in props:
            raise DetectionFormatError(f"{path}: feature {i} has no confidence")
        conf = _parse_float(props["confidence"], path, f"feature {i}", "confidence")
        if not 0.0 <= conf <= 1.0:
            raise DetectionFormatError(f"{path}: feature {i}: confidence {conf} outside [0, 1]")
        footprint = None
        try:
            if "bbox" in feat:
                box = BBox(*map(float, feat["bbox"]))
            elif geom.get("type") == "Polygon":
                coords = geom["coordinates"]
                footprint = Polygon.from_rings(coords[0], coords[1:])
                box = polygon_bbox(footprint)
            else:
                raise DetectionFormatError(f"{path}: feature {i}: unsupported geometry")
        except (GeometryError, KeyError, TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, DetectionFormatError):
                raise
            raise DetectionFormatError(f"{path}: feature {i}: malformed geometry ({exc})") from None
        tile = props.get("tile")
        dets.append(Detection(box, conf, footprint=footprint,
                              tile=None if tile is None else int(tile)))
    return dets


def read_detections(path) -> List[Detection]:
    """Read detections from a CSV or a FeatureCollection (``.json``/``.geojson``)."""
    path = Path(path)
    if path.suffix.lower() in (".json", ".geojson"):
        return read_detections_geojson(path)
    return read_detections_csv(path)


def write_detections_csv(dets: Sequence[Detection], path, with_tile=False) -> None:
    with open(path, "w", newline="") as fh:
        cols = list(DETECTION_COLUMNS) + (["tile"] if with_tile else [])
        fh.write(",".join(cols) + "\n")
        for d in dets:
            b = d.bbox
            fields = [repr(b.minx), repr(b.miny), repr(b.maxx), repr(b.maxy), repr(d.confidence)]
            if with_tile:
                fields.append("" if d.tile is None else str(d.tile))
            fh.write(",".join(fields) + "\n")


def write_detections_geojson(dets: Sequence[Detection], path) -> None:
    feats = []
    for d in dets:
        poly = d.footprint or Polygon.from_bbox(d.bbox)
        rings = [poly.exterior, *poly.interiors]
        props = {"confidence": d.confidence}
        if d.tile is not None:
            props["tile"] = d.tile
        feats.append({"type": "Feature", "properties": props,
                      "geometry": {"type": "Polygon",
                                   "coordinates": [[list(p) for p in r] for r in rings]}})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, indent=1)
        fh.write("\n")
