import numpy as np
import pytest

from tlscrowns.geom import BBox, bbox_iou
from tlscrowns.labelgen import LabelGenConfig, label_plot
from tlscrowns.metrics import evaluate, match
from tlscrowns.predictions import TilingConfig, make_tiles, merge_tiled
from tlscrowns.synth import (
    SynthSceneConfig,
    brute_force_index_map,
    generate_scene,
    nested_scene,
    perturb_to_detections,
    tile_duplicates,
)

from .conftest import box_label


def test_scene_is_deterministic():
    cfg = SynthSceneConfig(seed=7, n_trees=4, points_per_tree=500)
    a, ta = generate_scene(cfg)
    b, tb = generate_scene(cfg)
    assert ta.to_dict() == tb.to_dict()
    for x, y in zip(a.trees, b.trees):
        assert np.array_equal(x.points, y.points)
    c, _ = generate_scene(SynthSceneConfig(seed=8, n_trees=4, points_per_tree=500))
    assert not np.array_equal(a.trees[0].points, c.trees[0].points)


def test_tree_points_stay_within_crown_and_plot():
    cfg = SynthSceneConfig(seed=3, n_trees=6, plot_side=12.0, points_per_tree=800)
    plot, truth = generate_scene(cfg)
    assert len(plot.trees) == 6
    for tree, p in zip(plot.trees, truth.trees):
        pts = tree.points
        d = np.hypot(pts[:, 0] - p.x, pts[:, 1] - p.y)
        assert d.max() <= p.radius + 0.05 + 1e-9
        assert pts[:, 2].max() <= p.height + 1e-9
        assert pts[:, 0].min() >= 0 and pts[:, 0].max() <= cfg.plot_side
        assert len(pts) == cfg.points_per_tree


def test_single_tree_label_covers_crown_disc():
    cfg = SynthSceneConfig(seed=1, n_trees=1, radius_range=(1.0, 1.0), points_per_tree=20000,
                           stem_points=0)
    plot, truth = generate_scene(cfg)
    run = label_plot(plot, LabelGenConfig(resolution=0.05, fill_window=1))
    (lab,) = run.labels
    p = truth.trees[0]
    disc = BBox(p.x - p.radius, p.y - p.radius, p.x + p.radius, p.y + p.radius)
    assert bbox_iou(lab.bbox, disc) > 0.9
    # the one-cell gap fill grows the disc by at most two cells of radius
    assert np.pi * p.radius ** 2 <= lab.area <= np.pi * (p.radius + 2 * 0.05) ** 2


def test_zero_overlap_gives_disjoint_footprints():
    cfg = SynthSceneConfig(seed=5, n_trees=6, plot_side=12.0, overlap=0.0,
                           points_per_tree=3000, stem_points=0)
    plot, truth = generate_scene(cfg)
    for i, a in enumerate(truth.trees):
        for b in truth.trees[i + 1:]:
            assert np.hypot(a.x - b.x, a.y - b.y) >= a.radius + b.radius
    run = label_plot(plot, LabelGenConfig(resolution=0.05, fill_window=1))
    assert not run.omitted
    grid, oracle = brute_force_index_map(plot, 0.05, 1)
    assert np.array_equal(run.mosaic.index_band, oracle)


def test_nested_scene_hides_the_short_tree():
    plot, truth = nested_scene(seed=4)
    tall, short = truth.trees[0], truth.trees[1]
    assert short.height < tall.height - tall.crown_depth
    assert np.hypot(short.x - tall.x, short.y - tall.y) + short.radius < tall.radius
    run = label_plot(plot, LabelGenConfig(resolution=0.02, fill_window=1))
    assert run.omitted == [2]


def _grid_labels(n, side=1.0, gap=1.0, height=None):
    per_row = int(np.ceil(np.sqrt(n)))
    out = []
    for k in range(n):
        r, c = divmod(k, per_row)
        x, y = c * (side + gap), r * (side + gap)
        out.append(box_label(k + 1, x, y, x + side, y + side, height))
    return out


def test_perturb_perfect_and_empty():
    labels = _grid_labels(16)
    dets, book = perturb_to_detections(labels, seed=0, tp_rate=1.0, fp_count=0, jitter=0.0)
    assert book.n_tp == 16 and book.n_fp == 0 and book.n_fn == 0
    assert evaluate(dets, labels).ap("all", 0.5) == 1.0

    dets, book = perturb_to_detections(labels, seed=0, tp_rate=0.0, fp_count=3, jitter=0.1)
    assert book.n_tp == 0 and book.n_fp == 3 and book.n_fn == 16
    m = match(dets, labels, 0.5)
    assert not m.is_tp.any()


@pytest.mark.parametrize("seed", range(5))
def test_perturb_bookkeeping_matches_counts(seed):
    labels = _grid_labels(50)
    dets, book = perturb_to_detections(labels, seed=seed, tp_rate=0.6, fp_count=10,
                                       jitter=0.1)
    assert (book.n_tp, book.n_fp, book.n_fn) == (30, 10, 20)
    m = match(dets, labels, 0.5)
    assert int(m.is_tp.sum()) == 30
    got = {d: labels[lab].tree_id for d, lab, _ in m.pairs}
    assert got == book.tp_source
    assert set(m.unmatched_detections) == set(book.fp_indices)


def test_perturb_is_seeded():
    labels = _grid_labels(20)
    a, _ = perturb_to_detections(labels, seed=9, tp_rate=0.5, fp_count=4, jitter=0.2)
    b, _ = perturb_to_detections(labels, seed=9, tp_rate=0.5, fp_count=4, jitter=0.2)
    assert a == b


def test_tile_duplicates_are_removed_by_nms():
    labels = _grid_labels(25, side=1.5, gap=1.0)
    dets, _ = perturb_to_detections(labels, seed=2, tp_rate=1.0, fp_count=0, jitter=0.05)
    extent = BBox(0, 0, 12.5, 12.5)
    tcfg = TilingConfig(6.0, 0.4, overlap_fraction=0.5)
    raw = tile_duplicates(dets, extent, tcfg, seed=2)
    assert len(raw) > len(dets)
    assert {d.tile for d in raw} <= set(range(len(make_tiles(extent, tcfg))))
    merged = merge_tiled([(None, raw)], tcfg, extent)
    assert len(merged) == len(dets)
    assert evaluate(merged, labels).ap("all", 0.5) == 1.0
