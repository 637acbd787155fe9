"""NumPy implementations of the hot kernels.

These are the reference versions. ``_ckernels.pyx`` must produce bit-identical
output for the same inputs.
"""

import numpy as np

NODATA_INDEX = -1


def bin_max(ix, iy, z, ncols, nrows):
    """Per-cell maximum of ``z`` over points binned at local cell ``(ix, iy)``.

    Cells that receive no point are NaN. Row 0 is the bottom row.
    """
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    z = np.asarray(z, dtype=np.float64)
    if ix.size and (ix.min() < 0 or iy.min() < 0 or ix.max() >= ncols or iy.max() >= nrows):
        raise IndexError("point falls outside the grid")
    out = np.full(nrows * ncols, -np.inf)
    np.maximum.at(out, iy * ncols + ix, z)
    out[np.isneginf(out)] = np.nan
    return out.reshape(nrows, ncols)


def fill_gaps(heights, window):
    """Single-pass neighbourhood-max fill of NaN cells within Chebyshev ``window``."""
    heights = np.asarray(heights, dtype=np.float64)
    out = heights.copy()
    if window <= 0 or heights.size == 0:
        return out
    nrows, ncols = heights.shape
    src = np.where(np.isnan(heights), -np.inf, heights)
    neigh = np.full_like(src, -np.inf)
    for dr in range(-window, window + 1):
        for dc in range(-window, window + 1):
            # neigh[r, c] = max(neigh[r, c], src[r + dr, c + dc])
            r0, r1 = max(0, -dr), min(nrows, nrows - dr)
            c0, c1 = max(0, -dc), min(ncols, ncols - dc)
            if r0 >= r1 or c0 >= c1:
                continue
            np.maximum(
                neigh[r0:r1, c0:c1],
                src[r0 + dr:r1 + dr, c0 + dc:c1 + dc],
                out=neigh[r0:r1, c0:c1],
            )
    holes = np.isnan(heights) & np.isfinite(neigh)
    out[holes] = neigh[holes]
    return out


def merge_tile(height_band, index_band, tile, tree_id, row_off, col_off):
    """Fold one tree's DSM into the mosaic bands in place.

    A tile cell wins a pixel when it is higher, or equal with a smaller id.
    """
    nrows, ncols = tile.shape
    if (row_off < 0 or col_off < 0 or row_off + nrows > height_band.shape[0]
            or col_off + ncols > height_band.shape[1]):
        raise IndexError("tile extends beyond the mosaic")
    hb = height_band[row_off:row_off + nrows, col_off:col_off + ncols]
    ib = index_band[row_off:row_off + nrows, col_off:col_off + ncols]
    valid = ~np.isnan(tile)
    with np.errstate(invalid="ignore"):
        take = valid & (
            (ib == NODATA_INDEX)
            | (tile > hb)
            | ((tile == hb) & (tree_id < ib))
        )
    hb[take] = tile[take]
    ib[take] = tree_id


def nms_keep(boxes, iou_threshold):
    """Greedy suppression over boxes already sorted by priority.

    Returns a boolean keep mask. A box survives iff its IoU with every
    previously kept box is strictly below ``iou_threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=bool)
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    kept = []
    for i in range(n):
        if kept:
            k = np.asarray(kept)
            iw = np.maximum(0.0, np.minimum(x2[i], x2[k]) - np.maximum(x1[i], x1[k]))
            ih = np.maximum(0.0, np.minimum(y2[i], y2[k]) - np.maximum(y1[i], y1[k]))
            inter = iw * ih
            iou = inter / (areas[i] + areas[k] - inter)
            if np.any(iou >= iou_threshold):
                continue
        keep[i] = True
        kept.append(i)
    return keep
