"""Geometry and grid primitives shared by the rest of the package.

Coordinates are planar metres. Grids use row 0 at the minimum y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

Ring = Tuple[Tuple[float, float], ...]


class GeometryError(ValueError):
    """Raised for invalid geometric input."""


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box with strictly positive width and height."""

    minx: float
    miny: float
    maxx: float
    maxy: float

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.minx, self.miny, self.maxx, self.maxy))
        for name, v in zip(("minx", "miny", "maxx", "maxy"), vals):
            object.__setattr__(self, name, v)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite bbox coordinates: {vals}")
        if not (self.minx < self.maxx and self.miny < self.maxy):
            raise GeometryError(f"degenerate bbox: {vals}")

    @property
    def width(self) -> float:
        return self.maxx - self.minx

    @property
    def height(self) -> float:
        return self.maxy - self.miny

    @property
    def area(self) -> float:
        return (self.maxx - self.minx) * (self.maxy - self.miny)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.minx, self.miny, self.maxx, self.maxy)

    def contains(self, other: "BBox") -> bool:
        return (self.minx <= other.minx and self.miny <= other.miny
                and other.maxx <= self.maxx and other.maxy <= self.maxy)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.minx + dx, self.miny + dy, self.maxx + dx, self.maxy + dy)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.maxx, b.maxx) - max(a.minx, b.minx))
    ih = max(0.0, min(a.maxy, b.maxy) - max(a.miny, b.miny))
    return iw * ih


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    The arithmetic mirrors the NMS kernels exactly so that thresholds give
    the same decisions everywhere.
    """
    inter = intersection_area(a, b)
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)`` arrays of ``minx, miny, maxx, maxy``."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.maximum(0.0, np.minimum(a[:, None, 2], b[None, :, 2])
                    - np.maximum(a[:, None, 0], b[None, :, 0]))
    ih = np.maximum(0.0, np.minimum(a[:, None, 3], b[None, :, 3])
                    - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def clip_bbox(b: BBox, extent: BBox) -> Optional[BBox]:
    """Intersection rectangle of ``b`` with ``extent``, or None if it has no area."""
    minx, miny = max(b.minx, extent.minx), max(b.miny, extent.miny)
    maxx, maxy = min(b.maxx, extent.maxx), min(b.maxy, extent.maxy)
    if minx >= maxx or miny >= maxy:
        return None
    return BBox(minx, miny, maxx, maxy)


def union_bbox(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    if not boxes:
        raise GeometryError("cannot take the union of zero boxes")
    return BBox(min(b.minx for b in boxes), min(b.miny for b in boxes),
                max(b.maxx for b in boxes), max(b.maxy for b in boxes))


def signed_ring_area(ring: Sequence[Sequence[float]]) -> float:
    """Shoelace area of a closed ring; positive when counter-clockwise.

    Vertices are taken relative to the first one, which keeps translated
    copies of lattice polygons numerically identical.
    """
    pts = np.asarray(ring, dtype=np.float64)
    if len(pts) < 4:
        return 0.0
    x = pts[:, 0] - pts[0, 0]
    y = pts[:, 1] - pts[0, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _as_ring(coords) -> Ring:
    ring = tuple((float(x), float(y)) for x, y in coords)
    if len(ring) and ring[0] != ring[-1]:
        raise GeometryError("ring is not closed")
    if len(ring) < 4:
        raise GeometryError("ring needs at least three distinct vertices")
    for x, y in ring:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise GeometryError("non-finite ring vertex")
    return ring


@dataclass(frozen=True)
class Polygon:
    """Polygon with a counter-clockwise exterior and clockwise holes.

    Rings are closed tuples of ``(x, y)``. Use :meth:`from_rings` to build
    one from rings of unknown winding.
    """

    exterior: Ring
    interiors: Tuple[Ring, ...] = field(default=())

    def __post_init__(self):
        ext = _as_ring(self.exterior)
        ints = tuple(_as_ring(r) for r in self.interiors)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "interiors", ints)
        if signed_ring_area(ext) <= 0:
            raise GeometryError("exterior ring must be counter-clockwise with positive area")
        for r in ints:
            if signed_ring_area(r) >= 0:
                raise GeometryError("interior rings must be clockwise")
        if polygon_area(self) <= 0:
            raise GeometryError("polygon area must be positive")

    @classmethod
    def from_rings(cls, exterior, interiors=()) -> "Polygon":
        """Build a polygon, fixing ring winding and closing open rings."""

        def close(r):
            r = [tuple(map(float, p)) for p in r]
            if r and r[0] != r[-1]:
                r.append(r[0])
            return r

        ext = close(exterior)
        if signed_ring_area(ext) < 0:
            ext = ext[::-1]
        holes = []
        for r in interiors:
            r = close(r)
            if signed_ring_area(r) > 0:
                r = r[::-1]
            holes.append(tuple(r))
        return cls(tuple(ext), tuple(holes))

    @classmethod
    def from_bbox(cls, b: BBox) -> "Polygon":
        return cls(((b.minx, b.miny), (b.maxx, b.miny), (b.maxx, b.maxy),
                    (b.minx, b.maxy), (b.minx, b.miny)))

    def without_holes(self) -> "Polygon":
        return Polygon(self.exterior)


def polygon_area(p: Polygon) -> float:
    """Area of the exterior minus the holes."""
    return signed_ring_area(p.exterior) + sum(signed_ring_area(r) for r in p.interiors)


def polygon_bbox(p: Polygon) -> BBox:
    xs = [x for x, _ in p.exterior]
    ys = [y for _, y in p.exterior]
    return BBox(min(xs), min(ys), max(xs), max(ys))


def translate(p: Polygon, dx: float, dy: float) -> Polygon:
    def shift(ring):
        return tuple((x + dx, y + dy) for x, y in ring)

    return Polygon(shift(p.exterior), tuple(shift(r) for r in p.interiors))


def _clip_ring_halfplane(pts, inside, cross):
    out = []
    n = len(pts)
    for i in range(n):
        cur, prev = pts[i], pts[i - 1]
        cin, pin = inside(cur), inside(prev)
        if cin:
            if not pin:
                out.append(cross(prev, cur))
            out.append(cur)
        elif pin:
            out.append(cross(prev, cur))
    return out


def _clip_ring_to_box(ring: Ring, b: BBox):
    # Sutherland-Hodgman against the four box edges; correct area for any
    # simple ring because the clip window is convex.
    pts = list(ring[:-1])

    def xcut(x0):
        def cross(p, q):
            t = (x0 - p[0]) / (q[0] - p[0])
            return (x0, p[1] + t * (q[1] - p[1]))
        return cross

    def ycut(y0):
        def cross(p, q):
            t = (y0 - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), y0)
        return cross

    for inside, cross in (
        (lambda p: p[0] >= b.minx, xcut(b.minx)),
        (lambda p: p[0] <= b.maxx, xcut(b.maxx)),
        (lambda p: p[1] >= b.miny, ycut(b.miny)),
        (lambda p: p[1] <= b.maxy, ycut(b.maxy)),
    ):
        if not pts:
            break
        pts = _clip_ring_halfplane(pts, inside, cross)
    return pts


def polygon_box_intersection_area(p: Polygon, b: BBox) -> float:
    """Area of ``p`` (holes included) that lies inside box ``b``."""
    total = 0.0
    for ring in (p.exterior, *p.interiors):
        pts = _clip_ring_to_box(ring, b)
        if len(pts) >= 3:
            total += signed_ring_area(pts + [pts[0]])
    return max(total, 0.0)


# --- pixel lattice -----------------------------------------------------------


def lattice_index(coords, resolution: float) -> np.ndarray:
    """Global lattice cell index ``floor(coord / resolution)`` as int64.

    Every grid in the package bins points through this one function so that
    per-tree grids and plot mosaics agree cell for cell.
    """
    return np.floor(np.asarray(coords, dtype=np.float64) / resolution).astype(np.int64)


@dataclass(frozen=True)
class GridSpec:
    """Raster grid on the global lattice of cell size ``resolution``.

    The lower-left corner sits at lattice cell ``(ix0, iy0)``, i.e. at world
    ``(ix0 * resolution, iy0 * resolution)``, which keeps every grid of the
    same resolution pixel-aligned with every other.
    """

    resolution: float
    ix0: int
    iy0: int
    ncols: int
    nrows: int

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise GeometryError(f"resolution must be positive, got {self.resolution}")
        if self.ncols < 1 or self.nrows < 1:
            raise GeometryError("grid must have at least one row and column")

    @property
    def origin_x(self) -> float:
        return self.ix0 * self.resolution

    @property
    def origin_y(self) -> float:
        return self.iy0 * self.resolution

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nrows, self.ncols)

    @classmethod
    def covering(cls, minx, miny, maxx, maxy, resolution) -> "GridSpec":
        """Smallest lattice-aligned grid containing every cell hit by the bounds."""
        ix0, iy0 = (int(v) for v in lattice_index([minx, miny], resolution))
        ix1, iy1 = (int(v) for v in lattice_index([maxx, maxy], resolution))
        return cls(float(resolution), ix0, iy0, ix1 - ix0 + 1, iy1 - iy0 + 1)

    def offset_in(self, other: "GridSpec") -> Tuple[int, int]:
        """``(row_off, col_off)`` of this grid inside ``other``.

        Raises GeometryError if the lattices differ or this grid sticks out.
        """
        if self.resolution != other.resolution:
            raise GeometryError(
                f"grid resolution {self.resolution} does not match {other.resolution}")
        row_off, col_off = self.iy0 - other.iy0, self.ix0 - other.ix0
        if (row_off < 0 or col_off < 0 or row_off + self.nrows > other.nrows
                or col_off + self.ncols > other.ncols):
            raise GeometryError("grid is not contained in the target grid")
        return row_off, col_off

    def cell_bbox(self, col: int, row: int) -> BBox:
        r = self.resolution
        return BBox((self.ix0 + col) * r, (self.iy0 + row) * r,
                    (self.ix0 + col + 1) * r, (self.iy0 + row + 1) * r)

    def extent(self) -> BBox:
        r = self.resolution
        return BBox(self.ix0 * r, self.iy0 * r,
                    (self.ix0 + self.ncols) * r, (self.iy0 + self.nrows) * r)
