import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tlscrowns import kernels

BACKENDS = kernels.available_backends()
needs_both = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def test_compiled_backend_active_when_built():
    forced = os.environ.get("TLSCROWNS_PURE_PYTHON", "") in ("1", "true", "yes")
    if "cython" in BACKENDS and not forced:
        assert kernels.BACKEND == "cython"
    else:
        assert kernels.BACKEND == "numpy"


def test_pure_python_switch():
    env = dict(os.environ, TLSCROWNS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from tlscrowns import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b, equal_nan=True)


@needs_both
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 200), st.integers(0, 2 ** 31))
def test_bin_max_backends_agree(ncols, nrows, n, seed):
    rng = np.random.default_rng(seed)
    ix = rng.integers(0, ncols, n)
    iy = rng.integers(0, nrows, n)
    z = np.round(rng.normal(10, 3, n), 1)  # repeats exercise ties
    py = BACKENDS["numpy"].bin_max(ix, iy, z, ncols, nrows)
    cy = BACKENDS["cython"].bin_max(ix, iy, z, ncols, nrows)
    assert _same(py, cy)


@needs_both
def test_bin_max_rejects_out_of_grid_points():
    for mod in BACKENDS.values():
        with pytest.raises(IndexError):
            mod.bin_max([0, 3], [0, 0], [1.0, 2.0], 3, 1)


@needs_both
@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=10),
                  elements=st.one_of(st.just(np.nan), st.floats(-5, 30))),
       st.integers(0, 3))
def test_fill_gaps_backends_agree(heights, window):
    py = BACKENDS["numpy"].fill_gaps(heights, window)
    cy = BACKENDS["cython"].fill_gaps(heights, window)
    assert _same(py, cy)


@needs_both
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_merge_tile_backends_agree(seed):
    bands = {}
    for name, mod in BACKENDS.items():
        r = np.random.default_rng(seed)
        hb = np.full((8, 9), np.nan)
        ib = np.full((8, 9), kernels.NODATA_INDEX, dtype=np.int64)
        for tree_id in r.permutation(np.arange(1, 6)):
            h, w = r.integers(1, 6, 2)
            tile = np.round(r.uniform(0, 3, (h, w)), 0)
            tile[r.random((h, w)) < 0.3] = np.nan
            ro, co = r.integers(0, 8 - h + 1), r.integers(0, 9 - w + 1)
            mod.merge_tile(hb, ib, tile, int(tree_id), int(ro), int(co))
        bands[name] = (hb, ib)
    assert _same(bands["numpy"][0], bands["cython"][0])
    assert _same(bands["numpy"][1], bands["cython"][1])


@needs_both
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 60), st.floats(0.05, 0.95), st.integers(0, 2 ** 31))
def test_nms_keep_backends_agree(n, thr, seed):
    rng = np.random.default_rng(seed)
    xy = np.round(rng.uniform(0, 10, (n, 2)), 1)
    wh = np.round(rng.uniform(0.1, 3, (n, 2)), 1)
    boxes = np.hstack([xy, xy + wh])
    py = BACKENDS["numpy"].nms_keep(boxes, thr)
    cy = BACKENDS["cython"].nms_keep(boxes, thr)
    assert _same(py, cy)
