"""Independent reference computations used by the metric tests."""

from fractions import Fraction


def box_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    if inter == 0:
        return 0.0
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def greedy_tp_flags(dets, labels, thr):
    """dets: list of (box, conf); labels: list of (id, box). Returns (confs, tp flags)."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], tuple(dets[i][0]), i))
    used = set()
    confs, flags = [], []
    for i in order:
        box, conf = dets[i]
        best = None
        for lid, lbox in labels:
            if lid in used:
                continue
            v = box_iou(box, lbox)
            if v >= thr and (best is None or v > best[0] or (v == best[0] and lid < best[1])):
                best = (v, lid)
        if best is not None:
            used.add(best[1])
        confs.append(conf)
        flags.append(best is not None)
    return confs, flags


def riemann_ap(flags, n_gt):
    """Sum over recall steps k/n_gt of the best precision reached at recall >= k/n_gt."""
    pts = []
    tp = fp = 0
    for f in flags:
        tp += f
        fp += not f
        pts.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for k in range(1, n_gt + 1):
        level = Fraction(k, n_gt)
        cands = [p for r, p in pts if r >= level]
        total += Fraction(1, n_gt) * (max(cands) if cands else 0)
    return float(total)


def sweep_f1(confs, flags, n_gt):
    """Best F1 over every confidence cut ``conf >= c``; ties keep the higher cut."""
    best, best_c = None, None
    for c in sorted(set(confs), reverse=True):
        tp = sum(1 for cf, f in zip(confs, flags) if cf >= c and f)
        kept = sum(1 for cf in confs if cf >= c)
        f1 = Fraction(2 * tp, kept + n_gt)
        if best is None or f1 > best:
            best, best_c = f1, c
    if best is None:
        return 0.0, None
    return float(best), best_c
