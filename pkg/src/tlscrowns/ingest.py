"""Reading individually segmented tree point clouds.

Two formats are supported: a directory of ``<tree_id>.xyz`` text files, and a
single ``x,y,z,tree_id`` CSV for a whole plot.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import BBox

CSV_COLUMNS = ("x", "y", "z", "tree_id")


class ParseError(ValueError):
    """Malformed point-cloud input. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class TreeCloud:
    """Points of one segmented tree, ``points`` shaped ``(n, 3)``."""

    tree_id: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"tree {self.tree_id}: points must be shaped (n, 3)")
        if len(pts) == 0:
            raise ValueError(f"tree {self.tree_id}: no points")
        if not np.isfinite(pts).all():
            raise ValueError(f"tree {self.tree_id}: non-finite coordinates")
        if int(self.tree_id) != self.tree_id or self.tree_id < 0:
            raise ValueError(f"tree id must be a non-negative integer, got {self.tree_id!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "tree_id", int(self.tree_id))
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, TreeCloud):
            return NotImplemented
        return self.tree_id == other.tree_id and np.array_equal(self.points, other.points)

    def __len__(self):
        return len(self.points)

    @property
    def max_height(self) -> float:
        return float(self.points[:, 2].max())

    def xy_bounds(self):
        """``(minx, miny, maxx, maxy)``; may be degenerate for tiny clouds."""
        lo = self.points[:, :2].min(axis=0)
        hi = self.points[:, :2].max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def plot_extent(trees: Sequence[TreeCloud]) -> BBox:
    """Tight xy bounds over every point of every tree."""
    if not trees:
        raise ValueError("plot_extent needs at least one tree")
    bounds = np.array([t.xy_bounds() for t in trees])
    return BBox(float(bounds[:, 0].min()), float(bounds[:, 1].min()),
                float(bounds[:, 2].max()), float(bounds[:, 3].max()))


@dataclass(frozen=True)
class PlotCloudSet:
    plot_id: str
    trees: tuple = field(default=())

    def __post_init__(self):
        trees = tuple(sorted(self.trees, key=lambda t: t.tree_id))
        if not trees:
            raise ValueError(f"plot {self.plot_id!r} has no trees")
        ids = [t.tree_id for t in trees]
        if len(set(ids)) != len(ids):
            raise ValueError(f"plot {self.plot_id!r} has duplicate tree ids")
        object.__setattr__(self, "trees", trees)

    @property
    def extent(self) -> BBox:
        return plot_extent(self.trees)

    @property
    def n_points(self) -> int:
        return sum(len(t) for t in self.trees)

    def tree(self, tree_id: int) -> TreeCloud:
        for t in self.trees:
            if t.tree_id == tree_id:
                return t
        raise KeyError(tree_id)


def _scan_xyz_lines(text, path):
    # Slow path used to pinpoint the first bad line.
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(fields)}", path, lineno)
        try:
            rows.append([float(f) for f in fields[:3]])
        except ValueError:
            raise ParseError(f"non-numeric field in {line.strip()!r}", path, lineno) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _tree_id_from_stem(path: Path) -> int:
    stem = path.stem
    if not stem.isdigit():
        raise ParseError(f"file name stem {stem!r} is not a decimal tree id", path)
    return int(stem)


def read_tree_xyz(path) -> TreeCloud:
    """Read one ``<tree_id>.xyz`` file (``x y z`` per line, ``#`` comments)."""
    path = Path(path)
    tree_id = _tree_id_from_stem(path)
    text = path.read_text()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty input is handled below
            pts = np.loadtxt(io.StringIO(text), comments="#", usecols=(0, 1, 2),
                             ndmin=2, dtype=np.float64)
    except (ValueError, IndexError):
        pts = _scan_xyz_lines(text, path)
    if pts.size == 0:
        raise ParseError("file contains no points", path)
    if not np.isfinite(pts).all():
        row = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
        raise ParseError(f"non-finite coordinate in data row {row + 1}", path)
    return TreeCloud(tree_id, pts)


def write_tree_xyz(cloud: TreeCloud, path) -> None:
    """Write with 17 significant digits so reading back is exact."""
    np.savetxt(path, cloud.points, fmt="%.17g")


def read_plot_csv(path, plot_id=None) -> PlotCloudSet:
    """Read an ``x,y,z,tree_id`` CSV and group the rows into trees."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", path) from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)}", path, 1)
        cols = [header.index(c) for c in CSV_COLUMNS]
        xyz, ids = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            try:
                x, y, z = (float(row[c]) for c in cols[:3])
                tid_f = row[cols[3]].strip()
                tid = int(tid_f)
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row!r}", path, lineno) from None
            if tid < 0:
                raise ParseError(f"negative tree_id {tid}", path, lineno)
            xyz.append((x, y, z))
            ids.append(tid)
    if not xyz:
        raise ParseError("no data rows", path)
    pts = np.asarray(xyz, dtype=np.float64)
    if not np.isfinite(pts).all():
        raise ParseError("non-finite coordinate", path)
    ids = np.asarray(ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    uniq, starts = np.unique(ids[order], return_index=True)
    groups = np.split(order, starts[1:])
    trees = [TreeCloud(int(t), pts[g]) for t, g in zip(uniq, groups)]
    return PlotCloudSet(plot_id or path.stem, tuple(trees))


def write_plot_csv(plot: PlotCloudSet, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for t in plot.trees:
            for x, y, z in t.points:
                fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r},{t.tree_id}\n")


def read_plot_dir(path, plot_id=None) -> PlotCloudSet:
    """Load a plot from a directory of ``.xyz`` files, or a plot ``.csv``.

    ``path`` may also point directly at a CSV file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if path.is_file():
        return read_plot_csv(path, plot_id)
    xyz = sorted(p for p in path.iterdir() if p.suffix.lower() == ".xyz")
    if xyz:
        trees = [read_tree_xyz(p) for p in xyz]
        return PlotCloudSet(plot_id or path.name, tuple(trees))
    csvs = sorted(p for p in path.iterdir() if p.suffix.lower() == ".csv")
    if len(csvs) == 1:
        return read_plot_csv(csvs[0], plot_id or path.name)
    if len(csvs) > 1:
        raise ParseError("directory holds several .csv files; pass one explicitly", path)
    raise ParseError("no .xyz or .csv point clouds found", path)


def write_plot_dir(plot: PlotCloudSet, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t in plot.trees:
        write_tree_xyz(t, path / f"{t.tree_id}.xyz")
