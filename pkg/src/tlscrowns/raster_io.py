"""ESRI ASCII grid (``.asc``) reading and writing.

Arrays in memory have row 0 at the bottom; the file stores the top row first.
"""

from pathlib import Path

import numpy as np

from .geom import GridSpec

NODATA_VALUE = -9999

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


def write_ascii_grid(path, grid: GridSpec, values, nodata=NODATA_VALUE, integer=False):
    """Write ``values`` (shape ``(nrows, ncols)``, NaN or ``nodata`` for gaps)."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"array shape {values.shape} does not match grid {grid.shape}")
    header = (
        f"ncols {grid.ncols}\n"
        f"nrows {grid.nrows}\n"
        f"xllcorner {grid.origin_x!r}\n"
        f"yllcorner {grid.origin_y!r}\n"
        f"cellsize {grid.resolution!r}\n"
        f"NODATA_value {nodata}\n"
    )
    flipped = values[::-1]
    with open(path, "w") as fh:
        fh.write(header)
        for row in flipped:
            if integer:
                fh.write(" ".join(str(int(v)) for v in row))
            else:
                fh.write(" ".join(str(nodata) if np.isnan(v) else repr(float(v)) for v in row))
            fh.write("\n")


def read_ascii_grid(path):
    """Return ``(header dict, array)`` with row 0 at the bottom and NaN for gaps."""
    path = Path(path)
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) == 2 and not _is_number(parts[0]):
            header[parts[0].lower()] = parts[1]
            i += 1
        else:
            break
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise ValueError(f"{path}: missing header field {key}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    data = np.array(" ".join(lines[i:]).split(), dtype=np.float64)
    if data.size != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {data.size}")
    arr = data.reshape(nrows, ncols)[::-1].copy()
    if "nodata_value" in header:
        arr[arr == float(header["nodata_value"])] = np.nan
    out = {
        "ncols": ncols,
        "nrows": nrows,
        "xllcorner": float(header.get("xllcorner", 0.0)),
        "yllcorner": float(header.get("yllcorner", 0.0)),
        "cellsize": float(header["cellsize"]),
        "nodata_value": float(header.get("nodata_value", NODATA_VALUE)),
    }
    return out, arr


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
