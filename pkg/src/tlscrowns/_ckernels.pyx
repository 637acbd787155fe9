# cython: language_level=3
"""Compiled versions of the kernels in ``_pykernels``; outputs are bit-identical."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isnan, INFINITY, NAN

cnp.import_array()

cdef cnp.int64_t NODATA_INDEX = -1


def bin_max(ix, iy, z, Py_ssize_t ncols, Py_ssize_t nrows):
    cdef const cnp.int64_t[::1] cx = np.ascontiguousarray(ix, dtype=np.int64)
    cdef const cnp.int64_t[::1] cy = np.ascontiguousarray(iy, dtype=np.int64)
    cdef const double[::1] cz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = cz.shape[0], i, c, r
    if cx.shape[0] != n or cy.shape[0] != n:
        raise ValueError("ix, iy and z must have equal length")
    out_arr = np.full((nrows, ncols), -np.inf)
    cdef double[:, ::1] out = out_arr
    cdef bint bad = False
    with nogil:
        for i in range(n):
            c = cx[i]
            r = cy[i]
            if c < 0 or r < 0 or c >= ncols or r >= nrows:
                bad = True
                break
            if cz[i] > out[r, c]:
                out[r, c] = cz[i]
        if not bad:
            for r in range(nrows):
                for c in range(ncols):
                    if out[r, c] == -INFINITY:
                        out[r, c] = NAN
    if bad:
        raise IndexError("point falls outside the grid")
    return out_arr


def fill_gaps(heights, int window):
    src_arr = np.ascontiguousarray(heights, dtype=np.float64)
    out_arr = src_arr.copy()
    if window <= 0 or src_arr.size == 0:
        return out_arr
    cdef const double[:, ::1] src = src_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t nrows = src.shape[0], ncols = src.shape[1]
    cdef Py_ssize_t r, c, rr, cc, r0, r1, c0, c1
    cdef double best, v
    with nogil:
        for r in range(nrows):
            for c in range(ncols):
                if not isnan(src[r, c]):
                    continue
                best = -INFINITY
                r0 = r - window if r >= window else 0
                r1 = r + window + 1 if r + window + 1 <= nrows else nrows
                c0 = c - window if c >= window else 0
                c1 = c + window + 1 if c + window + 1 <= ncols else ncols
                for rr in range(r0, r1):
                    for cc in range(c0, c1):
                        v = src[rr, cc]
                        if not isnan(v) and v > best:
                            best = v
                if best != -INFINITY:
                    out[r, c] = best
    return out_arr


def merge_tile(double[:, ::1] height_band, cnp.int64_t[:, ::1] index_band,
               tile, cnp.int64_t tree_id, Py_ssize_t row_off, Py_ssize_t col_off):
    cdef const double[:, ::1] t = np.ascontiguousarray(tile, dtype=np.float64)
    cdef Py_ssize_t nrows = t.shape[0], ncols = t.shape[1], r, c
    cdef double v, cur
    cdef cnp.int64_t owner
    if (row_off < 0 or col_off < 0 or row_off + nrows > height_band.shape[0]
            or col_off + ncols > height_band.shape[1]):
        raise IndexError("tile extends beyond the mosaic")
    with nogil:
        for r in range(nrows):
            for c in range(ncols):
                v = t[r, c]
                if isnan(v):
                    continue
                owner = index_band[row_off + r, col_off + c]
                cur = height_band[row_off + r, col_off + c]
                if owner == NODATA_INDEX or v > cur or (v == cur and tree_id < owner):
                    height_band[row_off + r, col_off + c] = v
                    index_band[row_off + r, col_off + c] = tree_id


def nms_keep(boxes, double iou_threshold):
    cdef const double[:, ::1] b = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = b.shape[0], i, j, nk = 0
    keep_arr = np.zeros(n, dtype=np.uint8)
    kept_arr = np.empty(n, dtype=np.intp)
    areas_arr = np.empty(n, dtype=np.float64)
    cdef cnp.uint8_t[::1] keep = keep_arr
    cdef Py_ssize_t[::1] kept = kept_arr
    cdef double[::1] areas = areas_arr
    cdef double iw, ih, inter, iou
    cdef bint ok
    with nogil:
        for i in range(n):
            areas[i] = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
        for i in range(n):
            ok = True
            for j in range(nk):
                iw = min(b[i, 2], b[kept[j], 2]) - max(b[i, 0], b[kept[j], 0])
                ih = min(b[i, 3], b[kept[j], 3]) - max(b[i, 1], b[kept[j], 1])
                if iw < 0.0:
                    iw = 0.0
                if ih < 0.0:
                    ih = 0.0
                inter = iw * ih
                iou = inter / (areas[i] + areas[kept[j]] - inter)
                if iou >= iou_threshold:
                    ok = False
                    break
            if ok:
                keep[i] = 1
                kept[nk] = i
                nk += 1
    return keep_arr.astype(bool)
