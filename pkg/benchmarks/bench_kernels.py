"""Compare the compiled and NumPy kernel backends on representative inputs.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import time

import numpy as np

from tlscrowns import kernels


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(rng):
    # one dense tree tile: 200k points on a 150 x 150 grid at 2 cm
    n, side = 200_000, 150
    ix = rng.integers(0, side, n)
    iy = rng.integers(0, side, n)
    z = rng.uniform(0, 20, n)
    heights = rng.uniform(0, 20, (side, side))
    heights[rng.random((side, side)) < 0.3] = np.nan
    tiles = []
    for tree_id in range(1, 41):
        h, w = rng.integers(50, 150, 2)
        t = rng.uniform(0, 20, (h, w))
        t[rng.random((h, w)) < 0.2] = np.nan
        tiles.append((t, tree_id, int(rng.integers(0, 500 - h)), int(rng.integers(0, 500 - w))))
    xy = rng.uniform(0, 30, (2000, 2))
    boxes = np.hstack([xy, xy + rng.uniform(0.5, 3, (2000, 2))])

    def merge(mod):
        hb = np.full((500, 500), np.nan)
        ib = np.full((500, 500), kernels.NODATA_INDEX, dtype=np.int64)
        for t, tid, r, c in tiles:
            mod.merge_tile(hb, ib, t, tid, r, c)

    return {
        "bin_max (200k pts)": lambda m: m.bin_max(ix, iy, z, side, side),
        "fill_gaps (150x150, w=1)": lambda m: m.fill_gaps(heights, 1),
        "merge_tile (40 tiles)": merge,
        "nms_keep (2000 boxes)": lambda m: m.nms_keep(boxes, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = kernels.available_backends()
    names = sorted(backends)
    work = workloads(np.random.default_rng(args.seed))
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in names)
          + ("   speedup" if len(names) == 2 else ""))
    for label, fn in work.items():
        times = {n: _best_of(lambda: fn(backends[n]), args.repeat) for n in names}
        row = f"{label:28s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if len(names) == 2:
            row += f"   {times['numpy'] / times['cython']:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
