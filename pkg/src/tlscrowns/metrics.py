"""Bounding-box detection scoring: matching, PR curves, AP, max-F1 and the
canopy stratum.

AP uses all-point interpolation of the monotone precision envelope. Strata
with no ground truth are reported as undefined rather than 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geom import BBox, intersection_area, iou_matrix, polygon_box_intersection_area
from .predictions import Detection, sort_detections

AP_INTERPOLATION = "all-point"
STRATA = ("all", "canopy")


class UndefinedMetricError(ValueError):
    """Metric requested for a stratum without ground truth."""


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Tuple[float, ...] = (0.5, 0.75)
    canopy_fraction: float = 0.75
    coverage_fraction: float = 0.5
    coverage_geometry: str = "footprint"

    def __post_init__(self):
        ts = tuple(sorted(float(t) for t in self.iou_thresholds))
        if not ts:
            raise ValueError("need at least one IoU threshold")
        for name in ("canopy_fraction", "coverage_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for t in ts:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold must lie in (0, 1], got {t}")
        if self.coverage_geometry not in ("footprint", "bbox"):
            raise ValueError("coverage_geometry must be 'footprint' or 'bbox'")
        object.__setattr__(self, "iou_thresholds", ts)


def _label_box(lab) -> BBox:
    return lab if isinstance(lab, BBox) else lab.bbox


def _label_id(lab, i) -> int:
    return getattr(lab, "tree_id", i)


@dataclass(frozen=True)
class MatchSet:
    """Greedy matching result.

    ``order`` lists detection indices in the order they were processed;
    ``assigned[k]`` is the label index matched by ``order[k]`` (or None).
    """

    iou_threshold: float
    order: Tuple[int, ...]
    confidences: Tuple[float, ...]
    assigned: Tuple[Optional[int], ...]
    ious: Tuple[float, ...]
    n_labels: int

    @property
    def pairs(self) -> List[Tuple[int, int, float]]:
        return [(d, lab, iou) for d, lab, iou in zip(self.order, self.assigned, self.ious)
                if lab is not None]

    @property
    def unmatched_detections(self) -> List[int]:
        return sorted(d for d, lab in zip(self.order, self.assigned) if lab is None)

    @property
    def unmatched_labels(self) -> List[int]:
        used = {lab for lab in self.assigned if lab is not None}
        return [i for i in range(self.n_labels) if i not in used]

    @property
    def is_tp(self) -> np.ndarray:
        return np.array([lab is not None for lab in self.assigned], dtype=bool)


def match(dets: Sequence[Detection], labels: Sequence, iou_threshold: float) -> MatchSet:
    """Greedy matching in confidence order.

    Each detection takes the still-unmatched label with the highest IoU at or
    above ``iou_threshold``; equal IoUs go to the smaller label id.
    """
    order = sort_detections(dets)
    n_lab = len(labels)
    ids = np.array([_label_id(lab, i) for i, lab in enumerate(labels)], dtype=np.int64)
    if order and n_lab:
        db = np.array([dets[i].bbox.as_tuple() for i in order])
        lb = np.array([_label_box(lab).as_tuple() for lab in labels])
        ious = iou_matrix(db, lb)
    else:
        ious = np.zeros((len(order), n_lab))
    free = np.ones(n_lab, dtype=bool)
    assigned, got = [], []
    for k in range(len(order)):
        row = np.where(free & (ious[k] >= iou_threshold), ious[k], -1.0)
        best = -1
        if n_lab and row.max() >= 0.0:
            top = row.max()
            cands = np.flatnonzero(row == top)
            best = int(cands[np.argmin(ids[cands])])
        if best >= 0:
            free[best] = False
            assigned.append(best)
            got.append(float(ious[k, best]))
        else:
            assigned.append(None)
            got.append(0.0)
    return MatchSet(float(iou_threshold), tuple(order),
                    tuple(float(dets[i].confidence) for i in order),
                    tuple(assigned), tuple(got), n_lab)


@dataclass(frozen=True, eq=False)
class PRCurve:
    """Cumulative PR points, one per detection in confidence order."""

    confidence: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_gt: int

    @property
    def defined(self) -> bool:
        return self.n_gt > 0

    def __len__(self):
        return len(self.confidence)

    def rows(self):
        return [(float(c), int(t), int(f), float(p), float(r)) for c, t, f, p, r in
                zip(self.confidence, self.tp, self.fp, self.precision, self.recall)]


def pr_curve(ms: MatchSet, n_gt: int) -> PRCurve:
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    if n_gt == 0:
        empty = np.zeros(0)
        return PRCurve(empty, empty.astype(np.int64), empty.astype(np.int64), empty, empty, 0)
    hit = ms.is_tp
    tp = np.cumsum(hit).astype(np.int64)
    fp = np.cumsum(~hit).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / (tp + fp)
    recall = tp / n_gt
    return PRCurve(np.asarray(ms.confidences, dtype=np.float64), tp, fp,
                   precision.astype(np.float64), recall.astype(np.float64), int(n_gt))


def average_precision(curve: PRCurve) -> float:
    """Area under the precision envelope over the achieved recall levels."""
    if not curve.defined:
        raise UndefinedMetricError("AP is undefined without ground truth")
    if len(curve) == 0:
        return 0.0
    rec = np.concatenate([[0.0], curve.recall, [1.0]])
    prec = np.concatenate([[0.0], curve.precision, [0.0]])
    # running max from the right: precision at recall r becomes the best
    # precision at any recall >= r
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.flatnonzero(rec[1:] != rec[:-1])
    return float(np.sum((rec[steps + 1] - rec[steps]) * prec[steps + 1]))


def max_f1(curve: PRCurve) -> Tuple[float, Optional[float]]:
    """Best F1 over confidence cuts and the cut achieving it.

    A cut at confidence ``c`` keeps every detection scoring ``>= c``. Equal
    F1 values prefer the higher cut.
    """
    if not curve.defined:
        raise UndefinedMetricError("F1 is undefined without ground truth")
    n = len(curve)
    if n == 0:
        return 0.0, None
    conf = curve.confidence
    ends = [i for i in range(n) if i == n - 1 or conf[i + 1] != conf[i]]
    best, best_c = -1.0, None
    for i in ends:
        # 2PR / (P + R) written over integer counts: one rounding, exact ties
        tp, fp = int(curve.tp[i]), int(curve.fp[i])
        f1 = 2 * tp / (tp + fp + curve.n_gt)
        if f1 > best:
            best, best_c = float(f1), float(conf[i])
    return best, best_c


def _coverage(det_box: BBox, lab, geometry: str) -> float:
    fp = getattr(lab, "footprint", None)
    if geometry == "footprint" and fp is not None:
        inter = polygon_box_intersection_area(fp, det_box)
    else:
        inter = intersection_area(det_box, _label_box(lab))
    return inter / det_box.area


def assign_heights(dets: Sequence[Detection], labels: Sequence,
                   coverage_fraction: float = 0.5,
                   geometry: str = "footprint") -> List[Detection]:
    """Give each detection the height of the label covering most of its box.

    A height is assigned only when that label covers strictly more than
    ``coverage_fraction`` of the detection's box area.
    """
    out = []
    boxes = np.array([_label_box(lab).as_tuple() for lab in labels]).reshape(-1, 4)
    for det in dets:
        b = det.bbox
        near = np.flatnonzero((boxes[:, 0] < b.maxx) & (boxes[:, 2] > b.minx)
                              & (boxes[:, 1] < b.maxy) & (boxes[:, 3] > b.miny))
        best, best_key = None, None
        for i in near:
            lab = labels[i]
            cov = _coverage(b, lab, geometry)
            key = (-cov, _label_id(lab, int(i)))
            if best_key is None or key < best_key:
                best, best_key = lab, key
        height = None
        if best is not None and -best_key[0] > coverage_fraction:
            height = getattr(best, "max_height", None)
        out.append(replace(det, assigned_height=height))
    return out


def canopy_threshold(labels: Sequence, fraction: float) -> float:
    if not labels:
        raise ValueError("no labels to stratify")
    heights = [lab.max_height for lab in labels]
    if any(h is None for h in heights):
        raise ValueError("every label needs a max_height for canopy stratification")
    return fraction * max(heights)


def canopy_filter(labels: Sequence, fraction: float = 0.75) -> list:
    """Labels whose max height is at least ``fraction`` of the tallest label."""
    thr = canopy_threshold(labels, fraction)
    return [lab for lab in labels if lab.max_height >= thr]


@dataclass(frozen=True, eq=False)
class StratumScore:
    iou_threshold: float
    n_gt: int
    n_det: int
    curve: PRCurve
    ap: Optional[float]
    max_f1: Optional[float]
    f1_confidence: Optional[float]
    tp: int
    fp: int

    @property
    def defined(self) -> bool:
        return self.n_gt > 0

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def score(dets: Sequence[Detection], labels: Sequence, iou_threshold: float) -> StratumScore:
    ms = match(dets, labels, iou_threshold)
    curve = pr_curve(ms, len(labels))
    tp = int(ms.is_tp.sum())
    if curve.defined:
        ap = average_precision(curve)
        f1, f1c = max_f1(curve)
    else:
        ap = f1 = f1c = None
    return StratumScore(float(iou_threshold), len(labels), len(dets), curve, ap, f1, f1c,
                        tp, len(dets) - tp)


@dataclass(frozen=True, eq=False)
class EvalResult:
    """Scores per stratum and IoU threshold: ``strata[stratum][iou]``."""

    strata: Dict[str, Dict[float, StratumScore]]
    config: EvalConfig
    notes: Dict[str, str] = field(default_factory=dict)

    def get(self, stratum: str, iou: float) -> StratumScore:
        return self.strata[stratum][float(iou)]

    def ap(self, stratum: str, iou: float) -> Optional[float]:
        return self.get(stratum, iou).ap

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalResult":
        meta = doc["metadata"]
        cfg = EvalConfig(tuple(meta["iou_thresholds"]), meta["canopy_fraction"],
                         meta["coverage_fraction"], meta.get("coverage_geometry", "footprint"))
        strata = {}
        for stratum, by_iou in doc["strata"].items():
            strata[stratum] = {}
            for key, s in by_iou.items():
                rows = np.asarray(s["pr"], dtype=np.float64).reshape(-1, 5)
                curve = PRCurve(rows[:, 0], rows[:, 1].astype(np.int64),
                                rows[:, 2].astype(np.int64), rows[:, 3], rows[:, 4], s["n_gt"])
                strata[stratum][float(key)] = StratumScore(
                    float(key), s["n_gt"], s["n_det"], curve, s["ap"], s["max_f1"],
                    s["f1_confidence"], s["tp"], s["fp"])
        return cls(strata, cfg, dict(meta.get("notes", {})))

    def to_dict(self) -> dict:
        out = {
            "metadata": {
                "ap_interpolation": AP_INTERPOLATION,
                "iou_thresholds": list(self.config.iou_thresholds),
                "canopy_fraction": self.config.canopy_fraction,
                "coverage_fraction": self.config.coverage_fraction,
                "coverage_geometry": self.config.coverage_geometry,
                **({"notes": dict(self.notes)} if self.notes else {}),
            },
            "strata": {},
        }
        for stratum, by_iou in self.strata.items():
            out["strata"][stratum] = {}
            for iou, s in by_iou.items():
                out["strata"][stratum][f"{iou:g}"] = {
                    "defined": s.defined,
                    "n_gt": s.n_gt,
                    "n_det": s.n_det,
                    "tp": s.tp,
                    "fp": s.fp,
                    "ap": s.ap,
                    "max_f1": s.max_f1,
                    "f1_confidence": s.f1_confidence,
                    "pr": [list(r) for r in s.curve.rows()],
                }
        return out


def evaluate(dets: Sequence[Detection], labels: Sequence, cfg: EvalConfig = EvalConfig()) -> EvalResult:
    """Score detections against crown labels for the "all" and "canopy" strata.

    The canopy stratum keeps labels at or above the canopy height threshold
    and detections whose assigned height reaches it; detections without an
    assigned height are dropped from that stratum only.
    """
    labels = list(labels)
    if labels and hasattr(labels[0], "tree_id"):
        labels.sort(key=lambda lab: lab.tree_id)
    strata = {"all": {t: score(dets, labels, t) for t in cfg.iou_thresholds}}
    notes = {}
    try:
        thr = canopy_threshold(labels, cfg.canopy_fraction)
    except ValueError as exc:
        notes["canopy"] = f"undefined: {exc}"
        strata["canopy"] = {t: score([], [], t) for t in cfg.iou_thresholds}
    else:
        can_labels = [lab for lab in labels if lab.max_height >= thr]
        with_h = assign_heights(dets, labels, cfg.coverage_fraction, cfg.coverage_geometry)
        can_dets = [d for d in with_h if d.assigned_height is not None and d.assigned_height >= thr]
        strata["canopy"] = {t: score(can_dets, can_labels, t) for t in cfg.iou_thresholds}
    return EvalResult(strata, cfg, notes)
