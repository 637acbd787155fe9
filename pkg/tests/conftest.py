import numpy as np
import pytest

from tlscrowns.geom import BBox, Polygon
from tlscrowns.labelgen import CrownLabel


def box_label(tree_id, minx, miny, maxx, maxy, height=None):
    poly = Polygon.from_bbox(BBox(minx, miny, maxx, maxy))
    return CrownLabel.from_footprint(tree_id, poly, height)


def random_boxes(rng, n, extent=10.0, size=(0.5, 3.0), lattice=None):
    out = []
    for _ in range(n):
        w, h = rng.uniform(*size, 2)
        x, y = rng.uniform(0, extent - w), rng.uniform(0, extent - h)
        if lattice:
            x, y, w, h = (max(round(v / lattice), 1 if k >= 2 else 0) * lattice
                          for k, v in enumerate((x, y, w, h)))
        out.append(BBox(x, y, x + w, y + h))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
