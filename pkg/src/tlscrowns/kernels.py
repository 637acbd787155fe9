"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise (or when
``TLSCROWNS_PURE_PYTHON=1`` is set) the NumPy versions are used. Both
backends give identical results, so callers never need to care which one
is active.
"""

import os

from . import _pykernels

NODATA_INDEX = _pykernels.NODATA_INDEX

_compiled = None
if os.environ.get("TLSCROWNS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _pykernels

BACKEND = "cython" if _compiled is not None else "numpy"

bin_max = _impl.bin_max
fill_gaps = _impl.fill_gaps
merge_tile = _impl.merge_tile
nms_keep = _impl.nms_keep


def available_backends():
    """Map backend name to module for every backend importable here."""
    backends = {"numpy": _pykernels}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        try:
            from . import _ckernels
        except ImportError:
            pass
        else:
            backends["cython"] = _ckernels
    return backends
