"""Synthetic segmented forests with known visibility, plus detection noise.

Randomness comes from NumPy's PCG64 bit generator. The master seed feeds a
``SeedSequence``; child 0 drives the layout and child ``i`` drives tree
``i``, so each tree's points depend only on the master seed and its index.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geom import BBox, GridSpec, bbox_iou, lattice_index, union_bbox
from .ingest import PlotCloudSet, TreeCloud
from .predictions import Detection, TilingConfig, make_tiles

SHAPES = ("cone", "paraboloid")
PLACEMENT_MARGIN = 0.1  # metres of clearance between crowns when overlap is 0


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_seq))


@dataclass(frozen=True)
class SynthSceneConfig:
    seed: int = 0
    n_trees: int = 5
    plot_side: float = 10.0
    shape: str = "cone"
    height_range: Tuple[float, float] = (8.0, 20.0)
    radius_range: Tuple[float, float] = (0.6, 1.5)
    points_per_tree: int = 4000
    overlap: float = 0.5
    crown_depth_fraction: float = 0.5
    stem_points: int = 50

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        for name in ("height_range", "radius_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < low <= high")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not self.plot_side > 2 * self.radius_range[1]:
            raise ValueError("plot_side must exceed the largest crown diameter")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if not 0.0 < self.crown_depth_fraction <= 1.0:
            raise ValueError("crown_depth_fraction must lie in (0, 1]")
        if self.stem_points < 0 or self.points_per_tree <= self.stem_points:
            raise ValueError("points_per_tree must exceed stem_points >= 0")


@dataclass(frozen=True)
class TreeParams:
    tree_id: int
    x: float
    y: float
    height: float
    radius: float
    crown_depth: float
    shape: str

    def surface(self, x, y):
        """Analytic crown surface height; NaN outside the crown disc."""
        d = np.hypot(np.asarray(x) - self.x, np.asarray(y) - self.y) / self.radius
        drop = d if self.shape == "cone" else d ** 2
        return np.where(d <= 1.0, self.height - self.crown_depth * drop, np.nan)


@dataclass
class SynthTruth:
    config: SynthSceneConfig
    trees: List[TreeParams]

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "trees": [asdict(t) for t in self.trees]}


def _place(cfg: SynthSceneConfig, rng: np.random.Generator):
    lo_h, hi_h = cfg.height_range
    lo_r, hi_r = cfg.radius_range
    placed = []
    for _ in range(cfg.n_trees):
        r = float(rng.uniform(lo_r, hi_r))
        h = float(rng.uniform(lo_h, hi_h))
        for _attempt in range(10000):
            x, y = (float(v) for v in rng.uniform(r, cfg.plot_side - r, size=2))
            ok = True
            for (px, py, pr, _) in placed:
                need = (1.0 - cfg.overlap) * (r + pr)
                if cfg.overlap == 0.0:
                    need += PLACEMENT_MARGIN
                if math.hypot(x - px, y - py) < need:
                    ok = False
                    break
            if ok:
                placed.append((x, y, r, h))
                break
        else:
            raise ValueError("could not place all crowns; enlarge the plot or raise overlap")
    return placed


def _sample_tree(p: TreeParams, n_crown: int, n_stem: int, rng: np.random.Generator):
    u = rng.random(n_crown)
    theta = rng.uniform(0.0, 2.0 * np.pi, n_crown)
    d = p.radius * np.sqrt(u)
    x = p.x + d * np.cos(theta)
    y = p.y + d * np.sin(theta)
    t = d / p.radius
    z = p.height - p.crown_depth * (t if p.shape == "cone" else t ** 2)
    crown = np.column_stack([x, y, z])
    if n_stem == 0:
        return crown
    sx = p.x + rng.uniform(-0.05, 0.05, n_stem)
    sy = p.y + rng.uniform(-0.05, 0.05, n_stem)
    sz = rng.uniform(0.0, p.height - p.crown_depth, n_stem)
    return np.vstack([crown, np.column_stack([sx, sy, sz])])


def generate_scene(cfg: SynthSceneConfig, plot_id: Optional[str] = None
                   ) -> Tuple[PlotCloudSet, SynthTruth]:
    """Point clouds sampled on analytic crown surfaces, plus stems."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees + 1)
    layout = _place(cfg, _rng(children[0]))
    params, clouds = [], []
    for i, (x, y, r, h) in enumerate(layout, start=1):
        p = TreeParams(i, x, y, h, r, cfg.crown_depth_fraction * h, cfg.shape)
        pts = _sample_tree(p, cfg.points_per_tree - cfg.stem_points, cfg.stem_points,
                           _rng(children[i]))
        params.append(p)
        clouds.append(TreeCloud(i, pts))
    return PlotCloudSet(plot_id or f"synth{cfg.seed}", tuple(clouds)), SynthTruth(cfg, params)


def _sample_lattice(p: TreeParams, spacing: float, rng: np.random.Generator):
    # regular sub-pixel lattice over the disc, lightly jittered, so every
    # pixel fully inside the crown holds at least one point
    n = int(math.ceil(2 * p.radius / spacing)) + 1
    g = (np.arange(n) * spacing) - p.radius
    gx, gy = np.meshgrid(g, g)
    gx = gx.ravel() + rng.uniform(-0.1, 0.1, gx.size) * spacing
    gy = gy.ravel() + rng.uniform(-0.1, 0.1, gy.size) * spacing
    keep = np.hypot(gx, gy) <= p.radius
    x, y = p.x + gx[keep], p.y + gy[keep]
    t = np.hypot(gx[keep], gy[keep]) / p.radius
    z = p.height - p.crown_depth * (t if p.shape == "cone" else t ** 2)
    return np.column_stack([x, y, z])


def nested_scene(seed: int = 0, resolution: float = 0.02, points: int = 3000
                 ) -> Tuple[PlotCloudSet, SynthTruth]:
    """A short tree entirely beneath a taller one, plus a free-standing tree.

    The short tree (id 2) sits inside the tall tree's crown disc and its apex
    is below the tall crown's lowest surface point. The tall crown is sampled
    on a lattice finer than ``resolution``, so the short tree can own no pixel.
    """
    rng = _rng(np.random.SeedSequence(seed))
    tall_r = float(rng.uniform(1.0, 1.5))
    tall_h = float(rng.uniform(15.0, 25.0))
    depth = 0.3 * tall_h
    cx, cy = 5.0 + float(rng.uniform(-0.5, 0.5)), 5.0 + float(rng.uniform(-0.5, 0.5))
    short_r = float(rng.uniform(0.2, 0.5))
    # keep the short crown (plus one filled cell) clear of the tall disc's edge pixels
    room = tall_r - short_r - 4 * resolution
    off = float(rng.uniform(0.0, max(room, 0.0)))
    ang = float(rng.uniform(0, 2 * np.pi))
    short_h = float(rng.uniform(0.3, 0.9)) * (tall_h - depth)
    trees = [
        TreeParams(1, cx, cy, tall_h, tall_r, depth, "cone"),
        TreeParams(2, cx + off * math.cos(ang), cy + off * math.sin(ang), short_h, short_r,
                   0.5 * short_h, "paraboloid"),
        TreeParams(3, cx + tall_r + 2.0, cy, 0.5 * tall_h, 0.8, 0.2 * tall_h, "cone"),
    ]
    clouds = []
    for i, p in enumerate(trees):
        tree_rng = _rng(np.random.SeedSequence([seed, i + 1]))
        if p.tree_id == 1:
            pts = _sample_lattice(p, 0.75 * resolution, tree_rng)
        else:
            pts = _sample_tree(p, points, 20, tree_rng)
        clouds.append(TreeCloud(p.tree_id, pts))
    cfg = SynthSceneConfig(seed=seed, n_trees=3, plot_side=20.0, points_per_tree=points,
                           overlap=1.0, radius_range=(0.2, 1.5), height_range=(1.0, 25.0))
    return PlotCloudSet(f"nested{seed}", tuple(clouds)), SynthTruth(cfg, trees)


# --- independent oracle ------------------------------------------------------


def brute_force_index_map(plot: PlotCloudSet, resolution: float, fill_window: int
                          ) -> Tuple[GridSpec, np.ndarray]:
    """Tallest-tree id per pixel computed from the raw points.

    Per tree: bin points on the shared lattice, keep the highest per cell,
    fill empty cells in the tree's own box from the highest valid neighbour
    within ``fill_window`` cells. Then take the per-pixel argmax across trees
    (smaller id on ties). Empty pixels are -1.
    """
    ext = plot.extent
    grid = GridSpec.covering(ext.minx, ext.miny, ext.maxx, ext.maxy, resolution)
    trees = sorted(plot.trees, key=lambda t: t.tree_id)
    stack = np.full((len(trees), grid.nrows, grid.ncols), -np.inf)
    for k, tree in enumerate(trees):
        pts = tree.points
        own = GridSpec.covering(*tree.xy_bounds(), resolution)
        cols = lattice_index(pts[:, 0], resolution) - own.ix0
        rows = lattice_index(pts[:, 1], resolution) - own.iy0
        cell = rows * own.ncols + cols
        order = np.lexsort((pts[:, 2], cell))
        cell_sorted = cell[order]
        last = np.flatnonzero(np.r_[cell_sorted[1:] != cell_sorted[:-1], True])
        surface = np.full(own.nrows * own.ncols, -np.inf)
        surface[cell_sorted[last]] = pts[order[last], 2]
        surface = surface.reshape(own.nrows, own.ncols)
        if fill_window > 0:
            neigh = ndimage.maximum_filter(surface, size=2 * fill_window + 1,
                                           mode="constant", cval=-np.inf)
            empty = np.isneginf(surface)
            surface = np.where(empty, neigh, surface)
        r0, c0 = own.iy0 - grid.iy0, own.ix0 - grid.ix0
        stack[k, r0:r0 + own.nrows, c0:c0 + own.ncols] = surface
    best = np.argmax(stack, axis=0)
    top = np.take_along_axis(stack, best[None], axis=0)[0]
    ids = np.array([t.tree_id for t in trees], dtype=np.int64)
    index = np.where(np.isneginf(top), -1, ids[best])
    return grid, index


# --- detection noise ---------------------------------------------------------


@dataclass
class DetectionBookkeeping:
    """Which synthetic detections are true positives and which labels are missed."""

    tp_source: Dict[int, int] = field(default_factory=dict)  # det index -> label tree_id
    fp_indices: List[int] = field(default_factory=list)
    fn_labels: List[int] = field(default_factory=list)
    n_labels: int = 0
    unjittered: List[int] = field(default_factory=list)

    @property
    def n_tp(self) -> int:
        return len(self.tp_source)

    @property
    def n_fp(self) -> int:
        return len(self.fp_indices)

    @property
    def n_fn(self) -> int:
        return len(self.fn_labels)

    def to_dict(self) -> dict:
        return {"tp_source": {str(k): v for k, v in self.tp_source.items()},
                "fp_indices": self.fp_indices, "fn_labels": self.fn_labels,
                "n_labels": self.n_labels, "unjittered": self.unjittered}


def _confidences(rng, n, model, true_positive):
    if model == "uniform":
        return rng.uniform(0.0, 1.0, n)
    if model == "separated":
        return rng.uniform(0.5, 1.0, n) if true_positive else rng.uniform(0.0, 0.5, n)
    raise ValueError(f"unknown confidence model {model!r}")


def perturb_to_detections(labels: Sequence, seed: int, tp_rate: float, fp_count: int,
                          jitter: float, conf_model: str = "separated",
                          extent: Optional[BBox] = None, iou_guarantee: float = 0.5,
                          max_tries: int = 200) -> Tuple[List[Detection], DetectionBookkeeping]:
    """Turn labels into noisy detections with a known TP/FP/FN split.

    ``round(tp_rate * n)`` labels become detections whose jittered box keeps
    IoU >= ``iou_guarantee`` with its source and < ``iou_guarantee`` with
    every other label (rejection sampling; after ``max_tries`` the exact box
    is used). ``fp_count`` extra boxes overlap no label at that IoU.
    """
    if not 0.0 <= tp_rate <= 1.0:
        raise ValueError("tp_rate must lie in [0, 1]")
    if fp_count < 0 or jitter < 0:
        raise ValueError("fp_count and jitter must be non-negative")
    rng = _rng(np.random.SeedSequence(seed))
    labels = sorted(labels, key=lambda lab: lab.tree_id)
    n = len(labels)
    boxes = [lab.bbox for lab in labels]
    k = int(round(tp_rate * n))
    chosen = sorted(rng.choice(n, size=k, replace=False).tolist()) if k else []
    book = DetectionBookkeeping(n_labels=n)
    book.fn_labels = [labels[i].tree_id for i in range(n) if i not in set(chosen)]

    def clear_of_others(box, skip):
        return all(bbox_iou(box, b) < iou_guarantee for j, b in enumerate(boxes) if j != skip)

    tp_boxes = []
    for i in chosen:
        src = boxes[i]
        box = None
        for _ in range(max_tries if jitter > 0 else 0):
            d = rng.uniform(-jitter, jitter, 4)
            try:
                cand = BBox(src.minx + d[0], src.miny + d[1], src.maxx + d[2], src.maxy + d[3])
            except ValueError:
                continue
            if bbox_iou(cand, src) >= iou_guarantee and clear_of_others(cand, i):
                box = cand
                break
        if box is None:
            if jitter > 0:
                book.unjittered.append(labels[i].tree_id)
            box = src
        tp_boxes.append((box, labels[i].tree_id))

    region = extent if extent is not None else (union_bbox(boxes) if boxes else None)
    if fp_count and region is None:
        raise ValueError("need labels or an extent to place false positives")
    fp_boxes = []
    for _ in range(fp_count):
        for _attempt in range(10000):
            ref = boxes[int(rng.integers(n))] if n else BBox(0, 0, 1, 1)
            w = min(ref.width * float(rng.uniform(0.6, 1.4)), region.width)
            h = min(ref.height * float(rng.uniform(0.6, 1.4)), region.height)
            x = float(rng.uniform(region.minx, region.maxx - w)) if region.width > w else region.minx
            y = float(rng.uniform(region.miny, region.maxy - h)) if region.height > h else region.miny
            cand = BBox(x, y, x + w, y + h)
            if clear_of_others(cand, -1):
                fp_boxes.append(cand)
                break
        else:
            raise ValueError("could not place a false positive clear of every label")

    tp_conf = _confidences(rng, len(tp_boxes), conf_model, True)
    fp_conf = _confidences(rng, len(fp_boxes), conf_model, False)
    dets = []
    for (box, tid), c in zip(tp_boxes, tp_conf):
        book.tp_source[len(dets)] = tid
        dets.append(Detection(box, float(c)))
    for box, c in zip(fp_boxes, fp_conf):
        book.fp_indices.append(len(dets))
        dets.append(Detection(box, float(c)))
    return dets, book


def tile_duplicates(dets: Sequence[Detection], extent: BBox, cfg: TilingConfig, seed: int,
                    jitter: float = 0.02, conf_drop: float = 0.05) -> List[Detection]:
    """Simulate tiled inference: each tile re-detects the boxes it fully contains.

    The first tile containing a box reports it unchanged; later tiles report a
    slightly jittered copy with a slightly lower confidence. Boxes no tile
    contains are reported once, by the tile holding their centre. Every output
    carries its tile index.
    """
    rng = _rng(np.random.SeedSequence(seed))
    tiles = make_tiles(extent, cfg)
    out = []
    for i, det in enumerate(dets):
        b = det.bbox
        hosts = [t for t, tb in enumerate(tiles) if tb.contains(b)]
        if not hosts:
            cx, cy = (b.minx + b.maxx) / 2, (b.miny + b.maxy) / 2
            hosts = [min(range(len(tiles)), key=lambda t: (
                abs((tiles[t].minx + tiles[t].maxx) / 2 - cx)
                + abs((tiles[t].miny + tiles[t].maxy) / 2 - cy), t))]
        for rank, t in enumerate(hosts):
            if rank == 0:
                out.append(Detection(b, det.confidence, tile=t))
                continue
            d = rng.uniform(-jitter, jitter, 4)
            box = BBox(b.minx + d[0], b.miny + d[1], b.maxx + d[2], b.maxy + d[3])
            conf = max(0.0, det.confidence - float(rng.uniform(0.0, conf_drop)))
            out.append(Detection(box, conf, tile=t))
    return out
