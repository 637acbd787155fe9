import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlscrowns.geom import (
    BBox,
    GeometryError,
    GridSpec,
    Polygon,
    bbox_iou,
    clip_bbox,
    iou_matrix,
    lattice_index,
    polygon_area,
    polygon_bbox,
    polygon_box_intersection_area,
    translate,
)


def pixel_count_area(boxes, res=1e-3, op="and"):
    """Area of the intersection/union of boxes by counting cell centres."""
    lo_x = min(b.minx for b in boxes)
    lo_y = min(b.miny for b in boxes)
    hi_x = max(b.maxx for b in boxes)
    hi_y = max(b.maxy for b in boxes)
    xs = lo_x + (np.arange(int(round((hi_x - lo_x) / res))) + 0.5) * res
    ys = lo_y + (np.arange(int(round((hi_y - lo_y) / res))) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    masks = [(gx > b.minx) & (gx < b.maxx) & (gy > b.miny) & (gy < b.maxy) for b in boxes]
    m = np.logical_and.reduce(masks) if op == "and" else np.logical_or.reduce(masks)
    return m.sum() * res * res


class TestBBox:
    def test_rejects_degenerate(self):
        with pytest.raises(GeometryError):
            BBox(0, 0, 0, 1)
        with pytest.raises(GeometryError):
            BBox(0, 1, 1, 0)
        with pytest.raises(GeometryError):
            BBox(0, 0, math.nan, 1)

    def test_fields_are_python_floats(self):
        b = BBox(np.float64(0), np.int64(0), 1, 2)
        assert type(b.minx) is float and type(b.miny) is float
        assert repr(b.minx) == "0.0"

    def test_iou_identity_and_disjoint(self):
        a = BBox(0, 0, 1, 1)
        assert bbox_iou(a, a) == 1.0
        assert bbox_iou(a, BBox(2, 2, 3, 3)) == 0.0
        assert bbox_iou(a, BBox(1, 0, 2, 1)) == 0.0  # shared edge

    def test_iou_one_seventh_pixel_oracle(self):
        a, b = BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)
        iou = bbox_iou(a, b)
        assert iou == pytest.approx(1 / 7, abs=1e-15)
        inter = pixel_count_area([a, b], op="and")
        union = pixel_count_area([a, b], op="or")
        assert iou == pytest.approx(inter / union, abs=1e-6)

    def test_iou_matches_pixel_oracle_on_lattice_boxes(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            c = rng.integers(0, 20, size=(2, 4)) / 10
            a = BBox(c[0, 0], c[0, 1], c[0, 0] + 0.1 + c[0, 2], c[0, 1] + 0.1 + c[0, 3])
            b = BBox(c[1, 0], c[1, 1], c[1, 0] + 0.1 + c[1, 2], c[1, 1] + 0.1 + c[1, 3])
            union = pixel_count_area([a, b], op="or")
            inter = pixel_count_area([a, b], op="and") if bbox_iou(a, b) > 0 else 0.0
            assert bbox_iou(a, b) == pytest.approx(inter / union, abs=1e-6)

    @given(st.lists(st.floats(-50, 50), min_size=8, max_size=8))
    def test_iou_symmetric_bounded(self, v):
        try:
            a = BBox(v[0], v[1], v[0] + abs(v[2]) + 0.01, v[1] + abs(v[3]) + 0.01)
            b = BBox(v[4], v[5], v[4] + abs(v[6]) + 0.01, v[5] + abs(v[7]) + 0.01)
        except GeometryError:
            return
        x = bbox_iou(a, b)
        assert x == bbox_iou(b, a)
        assert 0.0 <= x <= 1.0

    def test_iou_matrix_matches_scalar(self, rng):
        a = rng.uniform(0, 5, (7, 2))
        b = rng.uniform(0, 5, (5, 2))
        ba = np.hstack([a, a + rng.uniform(0.2, 2, (7, 2))])
        bb = np.hstack([b, b + rng.uniform(0.2, 2, (5, 2))])
        m = iou_matrix(ba, bb)
        for i in range(7):
            for j in range(5):
                assert m[i, j] == pytest.approx(bbox_iou(BBox(*ba[i]), BBox(*bb[j])), abs=1e-15)

    def test_clip(self):
        e = BBox(0, 0, 10, 10)
        inside = BBox(1, 1, 2, 2)
        assert clip_bbox(inside, e) == inside
        assert clip_bbox(BBox(11, 11, 12, 12), e) is None
        assert clip_bbox(BBox(10, 0, 11, 1), e) is None  # zero-area touch
        half = BBox(-1, 2, 1, 4)
        c = clip_bbox(half, e)
        assert c == BBox(0, 2, 1, 4)
        assert c.area == pytest.approx(pixel_count_area([half, e], res=1e-2), abs=1e-9)
        assert clip_bbox(c, e) == c


class TestPolygon:
    def test_unit_square_area_and_bbox(self):
        p = Polygon.from_bbox(BBox(0, 0, 1, 1))
        assert polygon_area(p) == 1.0
        assert polygon_bbox(p) == BBox(0, 0, 1, 1)

    def test_hole(self):
        hole = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
        p = Polygon.from_rings([(0, 0), (1, 0), (1, 1), (0, 1)], [hole])
        assert polygon_area(p) == 0.75
        assert polygon_area(p.without_holes()) == 1.0

    def test_winding_enforced(self):
        cw = ((0, 0), (0, 1), (1, 1), (1, 0), (0, 0))
        with pytest.raises(GeometryError):
            Polygon(cw)
        assert polygon_area(Polygon.from_rings(cw)) == 1.0

    def test_open_ring_rejected(self):
        with pytest.raises(GeometryError):
            Polygon(((0, 0), (1, 0), (1, 1), (0, 1)))

    def test_translate(self):
        p = Polygon.from_bbox(BBox(0, 0, 1, 1))
        assert translate(p, 0, 0) == p
        assert polygon_bbox(translate(p, 5, -3)) == BBox(5, -3, 6, -2)

    def test_translate_preserves_lattice_area(self):
        rng = np.random.default_rng(1)
        from tlscrowns.labelgen import trace_rings

        for _ in range(200):
            mask = rng.random((6, 6)) < 0.6
            if not mask.any():
                continue
            from scipy import ndimage

            lab, n = ndimage.label(mask)
            comp = lab == 1
            rings = trace_rings(comp)
            res = 0.02
            outer = [r for r in rings if _ring_area2(r) > 0]
            holes = [r for r in rings if _ring_area2(r) < 0]
            poly = Polygon.from_rings(outer[0] * res, [h * res for h in holes])
            a = polygon_area(poly)
            assert a == pytest.approx(comp.sum() * res * res, abs=1e-12)
            dx, dy = rng.integers(-500, 500, 2) * res
            assert polygon_area(translate(poly, dx, dy)) == pytest.approx(a, rel=0, abs=1e-12)

    def test_l_shape_bbox_vertex_scan(self):
        ring = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 3), (0, 3)]
        p = Polygon.from_rings(ring)
        xs, ys = zip(*ring)
        assert polygon_bbox(p) == BBox(min(xs), min(ys), max(xs), max(ys))
        assert polygon_area(p) == 4.0

    def test_box_intersection_area(self):
        ring = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 3), (0, 3)]
        hole = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
        p = Polygon.from_rings(ring, [hole])
        assert polygon_box_intersection_area(p, BBox(-1, -1, 5, 5)) == pytest.approx(3.75)
        assert polygon_box_intersection_area(p, BBox(0, 0, 1, 1)) == pytest.approx(0.75)
        assert polygon_box_intersection_area(p, BBox(1.5, 1.5, 3, 3)) == 0.0
        assert polygon_box_intersection_area(p, BBox(0.5, 0.5, 1.5, 2)) == pytest.approx(
            0.5 * 1.5 + 0.5 * 0.5 - 0.25 * 0.25)

    def test_box_intersection_area_pixel_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            mask = rng.random((8, 8)) < 0.7
            from scipy import ndimage

            from tlscrowns.labelgen import trace_rings

            lab, _ = ndimage.label(mask)
            comp = lab == 1
            rings = trace_rings(comp)
            outer = [r for r in rings if _ring_area2(r) > 0]
            holes = [r for r in rings if _ring_area2(r) < 0]
            poly = Polygon.from_rings(outer[0].astype(float), [h.astype(float) for h in holes])
            x0, y0 = rng.uniform(-1, 6, 2)
            box = BBox(x0, y0, x0 + rng.uniform(0.5, 4), y0 + rng.uniform(0.5, 4))
            # fine sampling of cell membership
            s = 200
            xs = (np.arange(8 * s) + 0.5) / s
            gx, gy = np.meshgrid(xs, xs)
            inside = comp[gy.astype(int), gx.astype(int)]
            inbox = (gx > box.minx) & (gx < box.maxx) & (gy > box.miny) & (gy < box.maxy)
            oracle = (inside & inbox).sum() / s / s
            assert polygon_box_intersection_area(poly, box) == pytest.approx(oracle, abs=0.05)


def _ring_area2(r):
    r = np.asarray(r)
    return int(np.sum(r[:-1, 0] * r[1:, 1] - r[1:, 0] * r[:-1, 1]))


class TestGrid:
    def test_lattice_index(self):
        assert lattice_index([0.0, 0.019999, 0.02, -0.001], 0.02).tolist() == [0, 0, 1, -1]

    def test_covering_and_offset(self):
        g = GridSpec.covering(0.01, 0.01, 0.01, 0.01, 0.02)
        assert (g.ix0, g.iy0, g.ncols, g.nrows) == (0, 0, 1, 1)
        big = GridSpec.covering(-1, -1, 1, 1, 0.02)
        r, c = g.offset_in(big)
        assert big.cell_bbox(c, r) == g.cell_bbox(0, 0)
        with pytest.raises(GeometryError):
            big.offset_in(g)
        with pytest.raises(GeometryError):
            g.offset_in(GridSpec(0.01, 0, 0, 10, 10))

    def test_origin_is_lattice_multiple(self):
        g = GridSpec.covering(1.2345, -3.21, 5, 5, 0.02)
        assert g.origin_x == g.ix0 * 0.02 and g.origin_y == g.iy0 * 0.02
        e = g.extent()
        assert e.minx <= 1.2345 < e.maxx and e.miny <= -3.21

    @settings(max_examples=50)
    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_point_lies_in_its_cell(self, x, y):
        res = 0.02
        g = GridSpec.covering(x, y, x, y, res)
        b = g.cell_bbox(0, 0)
        assert b.minx - 1e-9 <= x <= b.maxx + 1e-9
        assert b.miny - 1e-9 <= y <= b.maxy + 1e-9
