"""Detection evaluation: IoU, greedy matching, PR curves, AP/mAP and P/R/F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .annotations import BoundingBox, Detection
from .datasetops import DatasetManifest, load_annotation
from .errors import EmptySplit, MixedImageIds, NoGroundTruth, UnknownClassId, UnknownImageId

DEFAULT_IOU = 0.5
DEFAULT_CONFIDENCE = 0.25


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class Verdict:
    """Outcome for one detection; ``gt_index`` is None for a false positive."""

    detection: Detection
    gt_index: int | None
    iou: float = 0.0
    order: int = 0  # position in the caller's detection list

    @property
    def is_tp(self) -> bool:
        return self.gt_index is not None


@dataclass(frozen=True)
class MatchResult:
    image_id: str | None
    verdicts: tuple[Verdict, ...]  # confidence order
    n_gt: int
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(v.is_tp for v in self.verdicts)

    @property
    def fp(self) -> int:
        return len(self.verdicts) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def match_detections(
    dets: Sequence[Detection], gts: Sequence[BoundingBox], iou_threshold: float = DEFAULT_IOU
) -> MatchResult:
    """Greedy one-to-one matching of one image's detections of a single class.

    Detections are visited by descending confidence (ties keep input order);
    each claims the still-unmatched ground truth with the highest IoU at or
    above ``iou_threshold``, ties going to the lower ground-truth index.
    """
    ids = {d.image_id for d in dets}
    if len(ids) > 1:
        raise MixedImageIds(f"detections span several images: {sorted(ids)[:3]}")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    verdicts = []
    for i in order:
        det = dets[i]
        best, best_iou = None, iou_threshold
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            o = iou(det.box, gt)
            if o > best_iou or (best is None and o >= best_iou):
                best, best_iou = g, o
        if best is not None:
            taken[best] = True
            verdicts.append(Verdict(det, best, best_iou, i))
        else:
            verdicts.append(Verdict(det, None, 0.0, i))
    image_id = next(iter(ids)) if ids else None
    return MatchResult(image_id, tuple(verdicts), len(gts), iou_threshold)


@dataclass(frozen=True)
class PrCurve:
    """One point per distinct confidence, swept from high to low.

    ``tp[k]``/``fp[k]`` count detections with confidence >= ``confidence[k]``.
    """

    confidence: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_gt: int

    @property
    def precision(self) -> np.ndarray:
        total = self.tp + self.fp
        return np.divide(self.tp, total, out=np.zeros(len(total)), where=total > 0)

    @property
    def recall(self) -> np.ndarray:
        return self.tp / self.n_gt

    def points(self) -> list[tuple[float, float, float]]:
        """``(recall, precision, confidence)`` triples."""
        return list(zip(self.recall.tolist(), self.precision.tolist(), self.confidence.tolist()))


def pr_curve(all_matches: Iterable[MatchResult]) -> PrCurve:
    """Pool per-image matches of one class into a confidence-swept PR curve.

    Detections sharing a confidence enter the sweep together, so the curve
    does not depend on how ties are ordered.
    """
    all_matches = list(all_matches)
    n_gt = sum(m.n_gt for m in all_matches)
    if n_gt == 0:
        raise NoGroundTruth("class has no ground truth boxes")
    conf = np.array([v.detection.confidence for m in all_matches for v in m.verdicts], dtype=float)
    hit = np.array([v.is_tp for m in all_matches for v in m.verdicts], dtype=bool)
    if conf.size == 0:
        empty = np.zeros(0)
        return PrCurve(empty, empty.astype(np.int64), empty.astype(np.int64), n_gt)
    order = np.argsort(-conf, kind="stable")
    conf, hit = conf[order], hit[order]
    tp = np.cumsum(hit)
    fp = np.cumsum(~hit)
    # last index of each run of equal confidence
    last = np.r_[np.nonzero(np.diff(conf))[0], conf.size - 1]
    return PrCurve(conf[last], tp[last].astype(np.int64), fp[last].astype(np.int64), n_gt)


def average_precision(curve: PrCurve, method: str = "all") -> float:
    """Area under the precision envelope.

    ``method="all"`` integrates over every recall step; ``"101"`` averages
    the envelope sampled at recall 0, 0.01, ..., 1.
    """
    recall = curve.recall
    precision = curve.precision
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if method == "all":
        steps = np.diff(np.r_[0.0, recall])
        return float(np.sum(steps * envelope))
    if method == "101":
        grid = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, grid, side="left")
        vals = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
        return float(np.mean(vals))
    raise ValueError(f"unknown AP method {method!r}")


@dataclass(frozen=True)
class ClassResult:
    class_id: int
    label: str
    n_gt: int
    ap: float | None  # None when the class has no ground truth
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.n_gt)

    @property
    def f1(self) -> float:
        return f1(self.precision, self.recall)


@dataclass(frozen=True)
class Averages:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassResult, ...]
    map: float
    macro: Averages
    micro: Averages
    tp: int
    fp: int
    fn: int
    config: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict, compare=False, repr=False)

    def metric(self, name: str, aggregation: str = "macro") -> float:
        """``map``, ``precision``, ``recall`` or ``f1`` in the given aggregation."""
        if name == "map":
            return self.map
        return getattr(getattr(self, aggregation), name)


def evaluate(
    dets: Sequence[Detection],
    manifest: DatasetManifest,
    split: str = "test",
    iou_threshold: float = DEFAULT_IOU,
    confidence_threshold: float = DEFAULT_CONFIDENCE,
    *,
    ap_method: str = "all",
) -> EvalReport:
    """Score detections against the ground truth of one manifest split.

    AP uses every detection; precision/recall/F1 use those with confidence
    at or above ``confidence_threshold``. Macro values average over classes
    with ground truth; micro values pool counts over all classes.
    Pass ``split="all"`` to evaluate the whole manifest.
    """
    records = manifest.records if split == "all" else manifest.split(split)
    if not records:
        raise EmptySplit(f"split {split!r} has no images")
    classes = manifest.classes
    gts = {r.image_id: load_annotation(r, classes) for r in records}

    grouped: dict[tuple[str, int], list[Detection]] = {}
    for det in dets:
        if det.image_id not in gts:
            raise UnknownImageId(f"detection for image {det.image_id!r} not in split {split!r}")
        if det.class_id not in classes:
            raise UnknownClassId(f"detection class id {det.class_id} outside 0..{len(classes) - 1}")
        grouped.setdefault((det.image_id, det.class_id), []).append(det)

    per_class = []
    curves = {}
    for class_id, label in classes:
        matches = []
        for image_id, img in gts.items():
            cls_gts = [b for b in img.boxes if b.class_id == class_id]
            cls_dets = grouped.get((image_id, class_id), [])
            if cls_gts or cls_dets:
                matches.append(match_detections(cls_dets, cls_gts, iou_threshold))
        n_gt = sum(m.n_gt for m in matches)
        kept = [v for m in matches for v in m.verdicts if v.detection.confidence >= confidence_threshold]
        tp = sum(v.is_tp for v in kept)
        ap = None
        if n_gt:
            curve = pr_curve(matches)
            curves[label] = curve
            ap = average_precision(curve, ap_method)
        per_class.append(ClassResult(class_id, label, n_gt, ap, tp, len(kept) - tp, n_gt - tp))

    scored = [c for c in per_class if c.n_gt > 0]
    mean = lambda xs: float(sum(xs) / len(xs)) if xs else 0.0  # noqa: E731
    map_ = mean([c.ap for c in scored])
    mp = mean([c.precision for c in scored])
    mr = mean([c.recall for c in scored])
    tp = sum(c.tp for c in per_class)
    fp = sum(c.fp for c in per_class)
    fn = sum(c.fn for c in per_class)
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    config = {
        "split": split,
        "iou_threshold": iou_threshold,
        "confidence_threshold": confidence_threshold,
        "ap_method": ap_method,
        "classes": list(classes.labels),
    }
    return EvalReport(
        tuple(per_class), map_, Averages(mp, mr, f1(mp, mr)), Averages(p, r, f1(p, r)),
        tp, fp, fn, config, curves,
    )


# ------------------------------------------------------------- serialization

CSV_FIELDS = (
    "map", "precision_macro", "recall_macro", "f1_macro",
    "precision_micro", "recall_micro", "f1_micro", "tp", "fp", "fn",
    "iou_threshold", "confidence_threshold", "ap_method", "split", "classes",
)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "map": report.map,
        "macro": {"precision": report.macro.precision, "recall": report.macro.recall, "f1": report.macro.f1},
        "micro": {"precision": report.micro.precision, "recall": report.micro.recall, "f1": report.micro.f1},
        "counts": {"tp": report.tp, "fp": report.fp, "fn": report.fn},
        "per_class": [
            {
                "class_id": c.class_id, "label": c.label, "n_gt": c.n_gt, "ap": c.ap,
                "tp": c.tp, "fp": c.fp, "fn": c.fn,
                "precision": c.precision, "recall": c.recall, "f1": c.f1,
            }
            for c in report.per_class
        ],
        "config": report.config,
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    data = json.loads(text)
    per_class = tuple(
        ClassResult(c["class_id"], c["label"], c["n_gt"], c["ap"], c["tp"], c["fp"], c["fn"])
        for c in data.get("per_class", [])
    )
    counts = data.get("counts", {})
    return EvalReport(
        per_class,
        data["map"],
        Averages(**data["macro"]),
        Averages(**data["micro"]),
        counts.get("tp", 0), counts.get("fp", 0), counts.get("fn", 0),
        data.get("config", {}),
    )


def report_to_csv(report: EvalReport) -> str:
    """Header plus one flat row; floats use ``repr`` so they parse back exactly."""
    cfg = report.config
    row = [
        report.map, report.macro.precision, report.macro.recall, report.macro.f1,
        report.micro.precision, report.micro.recall, report.micro.f1,
        report.tp, report.fp, report.fn,
        cfg.get("iou_threshold", ""), cfg.get("confidence_threshold", ""),
        cfg.get("ap_method", ""), cfg.get("split", ""), "|".join(cfg.get("classes", [])),
    ]
    return ",".join(CSV_FIELDS) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n"


def curves_to_csv(report: EvalReport) -> str:
    """Plot data: one ``label,confidence,recall,precision`` row per curve point."""
    lines = ["label,confidence,recall,precision"]
    for label, curve in report.curves.items():
        for r, p, c in curve.points():
            lines.append(f"{label},{c!r},{r!r},{p!r}")
    return "\n".join(lines) + "\n"
