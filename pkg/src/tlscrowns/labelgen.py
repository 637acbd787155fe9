"""Crown labels from individually segmented tree point clouds.

Pipeline: one top-of-canopy DSM per tree (max z per cell, then a gap fill),
a plot-wide two-band mosaic holding the canopy height and the id of the
tallest tree at every pixel, polygonisation of the id band, and finally one
footprint per tree (largest piece, holes removed).
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import kernels
from .geom import (
    BBox,
    GeometryError,
    GridSpec,
    Polygon,
    lattice_index,
    polygon_area,
    polygon_bbox,
    translate,
)
from .ingest import PlotCloudSet, TreeCloud

logger = logging.getLogger(__name__)

NODATA_INDEX = kernels.NODATA_INDEX
FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class MosaicAlignmentError(GeometryError):
    """A tile is not on the mosaic's pixel lattice."""


@dataclass(frozen=True)
class LabelGenConfig:
    resolution: float = 0.02
    fill_window: int = 1

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if int(self.fill_window) != self.fill_window or self.fill_window < 0:
            raise ValueError(f"fill_window must be a non-negative integer, got {self.fill_window}")


@dataclass(frozen=True, eq=False)
class DsmTile:
    """Per-tree surface model; ``heights`` is ``(nrows, ncols)`` with NaN gaps."""

    grid: GridSpec
    heights: np.ndarray

    def __post_init__(self):
        if self.heights.shape != self.grid.shape:
            raise ValueError("height array does not match the grid shape")

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.heights)


@dataclass(frozen=True, eq=False)
class CanopyMosaic:
    grid: GridSpec
    height_band: np.ndarray
    index_band: np.ndarray

    def owned_pixel_counts(self) -> Dict[int, int]:
        ids, counts = np.unique(self.index_band[self.index_band != NODATA_INDEX],
                                return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass(frozen=True)
class CrownLabel:
    """One visible crown.

    ``area`` is the tree's owned canopy area (owned pixels x res^2). It equals
    ``footprint_area`` unless the owned pixels are fragmented or perforated,
    in which case the footprint keeps only the largest piece, holes filled.
    """

    tree_id: int
    footprint: Polygon
    bbox: BBox
    max_height: Optional[float]
    area: float

    @property
    def footprint_area(self) -> float:
        return polygon_area(self.footprint)

    @classmethod
    def from_footprint(cls, tree_id, footprint, max_height=None, area=None):
        return cls(int(tree_id), footprint, polygon_bbox(footprint),
                   None if max_height is None else float(max_height),
                   polygon_area(footprint) if area is None else float(area))


def rasterize_tree(cloud: TreeCloud, resolution: float) -> DsmTile:
    """Max-z surface of one tree on the lattice-aligned grid covering its points."""
    pts = cloud.points
    grid = GridSpec.covering(*cloud.xy_bounds(), resolution)
    ix = lattice_index(pts[:, 0], resolution) - grid.ix0
    iy = lattice_index(pts[:, 1], resolution) - grid.iy0
    heights = kernels.bin_max(ix, iy, pts[:, 2], grid.ncols, grid.nrows)
    return DsmTile(grid, heights)


def fill_gaps(tile: DsmTile, window: int) -> DsmTile:
    """Fill empty cells with the highest valid neighbour within ``window`` cells.

    One pass only: freshly filled cells do not feed other cells.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    return DsmTile(tile.grid, kernels.fill_gaps(tile.heights, int(window)))


def tree_dsm(cloud: TreeCloud, cfg: LabelGenConfig) -> DsmTile:
    return fill_gaps(rasterize_tree(cloud, cfg.resolution), cfg.fill_window)


def build_mosaic(tiles: Sequence[Tuple[int, DsmTile]], extent: BBox,
                 resolution: float) -> CanopyMosaic:
    """Merge per-tree DSMs into height and tallest-tree bands.

    Equal heights go to the smaller tree id, so the result does not depend
    on the order of ``tiles``.
    """
    grid = GridSpec.covering(extent.minx, extent.miny, extent.maxx, extent.maxy, resolution)
    height_band = np.full(grid.shape, np.nan)
    index_band = np.full(grid.shape, NODATA_INDEX, dtype=np.int64)
    for tree_id, tile in tiles:
        try:
            row_off, col_off = tile.grid.offset_in(grid)
        except GeometryError as exc:
            raise MosaicAlignmentError(f"tree {tree_id}: {exc}") from None
        kernels.merge_tile(height_band, index_band, tile.heights, int(tree_id),
                           row_off, col_off)
    return CanopyMosaic(grid, height_band, index_band)


# --- polygonisation ----------------------------------------------------------

# Directions in counter-clockwise order: +x, +y, -x, -y.
_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


def trace_rings(mask: np.ndarray) -> List[np.ndarray]:
    """Boundary rings of a boolean mask, in local lattice units.

    Each ring is an ``(k, 2)`` int array of ``(col, row)`` corners, closed,
    with collinear vertices removed. Interior lies to the left, so outer
    boundaries come out counter-clockwise and holes clockwise. Where two
    filled pixels touch only at a corner the trace passes across the
    corner, so no ring ever touches itself.
    """
    mask = np.asarray(mask, dtype=bool)
    nrows, ncols = mask.shape
    pad = np.zeros((nrows + 2, ncols + 2), dtype=bool)
    pad[1:-1, 1:-1] = mask
    core = pad[1:-1, 1:-1]
    width = ncols + 1

    out_edges: Dict[int, list] = {}

    def add(rows, cols, sx, sy, d):
        for r, c in zip(rows.tolist(), cols.tolist()):
            v = (r + sy) * width + (c + sx)
            out_edges.setdefault(v, []).append(d)

    # bottom edges run +x from (c, r); right edges +y from (c+1, r);
    # top edges -x from (c+1, r+1); left edges -y from (c, r+1)
    r, c = np.nonzero(core & ~pad[:-2, 1:-1])
    add(r, c, 0, 0, 0)
    r, c = np.nonzero(core & ~pad[1:-1, 2:])
    add(r, c, 1, 0, 1)
    r, c = np.nonzero(core & ~pad[2:, 1:-1])
    add(r, c, 1, 1, 2)
    r, c = np.nonzero(core & ~pad[1:-1, :-2])
    add(r, c, 0, 1, 3)

    rings = []
    for start in sorted(out_edges):
        while out_edges.get(start):
            first = out_edges[start].pop(0)
            d = first
            verts = [start]
            v = start
            while True:
                dx, dy = _STEPS[d]
                v = v + dy * width + dx
                cands = list(out_edges.get(v, ()))
                if v == start:
                    cands.append(first)
                if not cands:
                    raise RuntimeError("open boundary while tracing rings")
                if len(cands) == 1:
                    nd = cands[0]
                else:
                    # two ways out of a corner-touching vertex: turn right
                    nd = (d - 1) % 4
                    if nd not in cands:
                        raise RuntimeError("inconsistent boundary at pinch vertex")
                if v == start and nd == first:
                    break
                out_edges[v].remove(nd)
                verts.append(v)
                d = nd
            ring = np.array([(vv % width, vv // width) for vv in verts], dtype=np.int64)
            ring = _drop_collinear(ring)
            rings.append(np.vstack([ring, ring[:1]]))
    return rings


def _drop_collinear(ring: np.ndarray) -> np.ndarray:
    n = len(ring)
    prev = ring[np.arange(n) - 1]
    nxt = ring[(np.arange(n) + 1) % n]
    cross = ((ring[:, 0] - prev[:, 0]) * (nxt[:, 1] - ring[:, 1])
             - (ring[:, 1] - prev[:, 1]) * (nxt[:, 0] - ring[:, 0]))
    return ring[cross != 0]


def _lattice_area2(ring: np.ndarray) -> int:
    """Twice the signed area of an integer ring (exact)."""
    x, y = ring[:, 0], ring[:, 1]
    return int(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


@dataclass(frozen=True)
class _Piece:
    polygon: Polygon
    n_pixels: int


def _to_world(ring, ix0, iy0, res):
    return tuple((float((ix0 + int(c)) * res), float((iy0 + int(r)) * res)) for c, r in ring)


def _pieces_from_mask(mask: np.ndarray, ix0: int, iy0: int, res: float) -> List[_Piece]:
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    pieces = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = labels[sl] == k
        rings = trace_rings(sub)
        areas = [_lattice_area2(rg) for rg in rings]
        outer = [i for i, a in enumerate(areas) if a > 0]
        if len(outer) != 1:
            raise RuntimeError(f"component has {len(outer)} outer rings")
        ox, oy = ix0 + sl[1].start, iy0 + sl[0].start
        ext = _to_world(rings[outer[0]], ox, oy, res)
        holes = tuple(_to_world(rings[i], ox, oy, res)
                      for i in range(len(rings)) if i != outer[0])
        pieces.append(_Piece(Polygon(ext, holes), int(sub.sum())))
    return pieces


def polygonize_index(mosaic: CanopyMosaic, tree_id: int) -> List[Polygon]:
    """One polygon per 4-connected group of pixels owned by ``tree_id``."""
    mask = mosaic.index_band == tree_id
    if not mask.any():
        return []
    g = mosaic.grid
    return [p.polygon for p in _pieces_from_mask(mask, g.ix0, g.iy0, g.resolution)]


def _footprint_key(area, poly):
    b = polygon_bbox(poly)
    return (-area, b.minx, b.miny)


def select_footprint(polys: Sequence[Polygon], areas: Optional[Sequence[float]] = None) -> Polygon:
    """Largest polygon by area with its holes removed.

    Equal areas go to the polygon whose bounding box has the lexicographically
    smallest ``(minx, miny)``. ``areas`` may supply exact precomputed areas.
    """
    if not polys:
        raise ValueError("no polygons to select from; tree has no visible footprint")
    if areas is None:
        raw = [polygon_area(p) for p in polys]
        top = max(raw)
        # shoelace on float vertices can differ in the last bits for equal areas
        areas = [top if abs(a - top) <= 1e-9 * top else a for a in raw]
    best = min(range(len(polys)), key=lambda i: _footprint_key(areas[i], polys[i]))
    return polys[best].without_holes()


# --- full pipeline -----------------------------------------------------------


@dataclass
class LabelRun:
    """Everything produced by one pipeline run."""

    config: LabelGenConfig
    mosaic: CanopyMosaic
    labels: List[CrownLabel]
    omitted: List[int] = field(default_factory=list)


def _tile_for(cloud, cfg):
    return cloud.tree_id, tree_dsm(cloud, cfg)


def label_plot(plot: PlotCloudSet, cfg: LabelGenConfig = LabelGenConfig(),
               threads: int = 1) -> LabelRun:
    res = cfg.resolution
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tiles = list(pool.map(lambda t: _tile_for(t, cfg), plot.trees))
    else:
        tiles = [_tile_for(t, cfg) for t in plot.trees]
    mosaic = build_mosaic(tiles, plot.extent, res)

    labels, omitted = [], []
    g = mosaic.grid
    for (tree_id, tile), cloud in zip(tiles, plot.trees):
        row_off, col_off = tile.grid.offset_in(g)
        window = mosaic.index_band[row_off:row_off + tile.grid.nrows,
                                   col_off:col_off + tile.grid.ncols]
        mask = window == tree_id
        if not mask.any():
            omitted.append(tree_id)
            continue
        pieces = _pieces_from_mask(mask, tile.grid.ix0, tile.grid.iy0, res)
        footprint = select_footprint([p.polygon for p in pieces],
                                     areas=[p.n_pixels for p in pieces])
        labels.append(CrownLabel(tree_id, footprint, polygon_bbox(footprint),
                                 cloud.max_height, int(mask.sum()) * res ** 2))
    if omitted:
        logger.info("%d tree(s) own no canopy pixels and were omitted: %s",
                    len(omitted), omitted)
    return LabelRun(cfg, mosaic, labels, omitted)


def generate_labels(plot: PlotCloudSet, cfg: LabelGenConfig = LabelGenConfig(),
                    threads: int = 1) -> List[CrownLabel]:
    """Non-overlapping crown footprints of every tree visible from above."""
    return label_plot(plot, cfg, threads).labels


# --- alignment corrections ---------------------------------------------------


def apply_corrections(labels: Sequence[CrownLabel], global_shift=(0.0, 0.0),
                      per_crown: Optional[Mapping[int, Tuple[float, float]]] = None
                      ) -> List[CrownLabel]:
    """Shift every footprint by ``global_shift``, then individual crowns.

    Areas are carried over unchanged; translation preserves them.
    """
    per_crown = dict(per_crown or {})
    ids = {lab.tree_id for lab in labels}
    unknown = sorted(set(per_crown) - ids)
    if unknown:
        raise KeyError(f"corrections reference unknown tree id(s): {unknown}")
    gdx, gdy = global_shift
    out = []
    for lab in labels:
        fp = lab.footprint
        if gdx or gdy:
            fp = translate(fp, gdx, gdy)
        if lab.tree_id in per_crown:
            dx, dy = per_crown[lab.tree_id]
            fp = translate(fp, dx, dy)
        out.append(replace(lab, footprint=fp, bbox=polygon_bbox(fp)))
    return out


def read_corrections(path):
    """Parse a ``tree_id,dx,dy`` CSV; a ``*`` id row holds the global shift."""
    global_shift = (0.0, 0.0)
    per_crown = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["tree_id", "dx", "dy"]:
            raise ValueError(f"{path}: expected header tree_id,dx,dy, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                key, dx, dy = (f.strip() for f in row)
                shift = (float(dx), float(dy))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            if key == "*":
                global_shift = shift
            else:
                try:
                    tid = int(key)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad tree id {key!r}") from None
                if tid in per_crown:
                    raise ValueError(f"{path}:{lineno}: duplicate tree id {tid}")
                per_crown[tid] = shift
    return global_shift, per_crown


# --- label files -------------------------------------------------------------


def labels_to_geojson(labels: Sequence[CrownLabel]) -> dict:
    features = []
    for lab in labels:
        rings = [lab.footprint.exterior, *lab.footprint.interiors]
        props = {"tree_id": lab.tree_id, "area_m2": lab.area}
        if lab.max_height is not None:
            props["max_height_m"] = lab.max_height
        features.append({
            "type": "Feature",
            "properties": props,
            "geometry": {"type": "Polygon",
                         "coordinates": [[list(p) for p in r] for r in rings]},
        })
    return {"type": "FeatureCollection", "features": features}


def write_labels(labels: Sequence[CrownLabel], path) -> None:
    with open(path, "w") as fh:
        json.dump(labels_to_geojson(labels), fh, indent=1)
        fh.write("\n")


def read_labels(path) -> List[CrownLabel]:
    """Read a crown FeatureCollection.

    Features without ``tree_id`` are numbered in file order; hand-drawn
    labels usually have no ``max_height_m``.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: not a FeatureCollection")
    labels = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        coords = geom.get("coordinates")
        if geom.get("type") == "MultiPolygon" and coords and len(coords) == 1:
            coords = coords[0]
        elif geom.get("type") != "Polygon":
            raise ValueError(f"{path}: feature {i} is not a Polygon")
        try:
            poly = Polygon.from_rings(coords[0], coords[1:])
        except (GeometryError, TypeError, IndexError, ValueError) as exc:
            raise ValueError(f"{path}: feature {i}: malformed geometry ({exc})") from None
        tid = props.get("tree_id", i)
        labels.append(CrownLabel.from_footprint(
            tid, poly, props.get("max_height_m"), props.get("area_m2")))
    ids = [lab.tree_id for lab in labels]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate tree_id values")
    return labels
