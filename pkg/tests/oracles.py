"""Independent reference computations used as test oracles.

Nothing here imports the matching / curve / AP code under test; IoU is
recomputed with exact rationals.
"""

from __future__ import annotations

import colorsys
import itertools
from fractions import Fraction


def exact_iou(a, b) -> Fraction:
    ax0, ay0, ax1, ay1 = (Fraction(v) for v in a)
    bx0, by0, bx1, by1 = (Fraction(v) for v in b)
    iw = max(Fraction(0), min(ax1, bx1) - max(ax0, bx0))
    ih = max(Fraction(0), min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def brute_force_match(dets, gts, threshold):
    """Exhaustive search over every injective detection -> ground-truth assignment.

    ``dets`` is a list of ``(confidence, box)``, ``gts`` a list of boxes.
    The winner is the assignment whose per-detection keys, read in
    descending-confidence order (stable on ties), are lexicographically
    largest; a detection's key is ``(1, iou, -gt_index)`` when matched and
    ``(0,)`` otherwise. Returns ``(order, assignment)`` where ``order`` lists
    detection indices in visiting order and ``assignment[k]`` is the
    ground-truth index claimed by ``order[k]`` (or None).
    """
    thr = Fraction(threshold)
    order = sorted(range(len(dets)), key=lambda i: -dets[i][0])
    options = []
    for i in order:
        opts = [None] + [g for g in range(len(gts)) if exact_iou(dets[i][1], gts[g]) >= thr]
        options.append(opts)
    best_key, best = None, None
    for combo in itertools.product(*options):
        used = [g for g in combo if g is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple(
            (0,) if g is None else (1, exact_iou(dets[i][1], gts[g]), -g) for i, g in zip(order, combo)
        )
        if best_key is None or key > best_key:
            best_key, best = key, combo
    return order, list(best)


def brute_force_curve(scored, n_gt):
    """Recount TP/FP at every distinct confidence threshold.

    ``scored`` is a list of ``(confidence, is_tp)``. Returns a list of
    ``(confidence, tp, fp, precision, recall)`` with exact fractions,
    highest threshold first.
    """
    rows = []
    for c in sorted({s for s, _ in scored}, reverse=True):
        tp = sum(1 for s, hit in scored if s >= c and hit)
        fp = sum(1 for s, hit in scored if s >= c and not hit)
        rows.append((c, tp, fp, Fraction(tp, tp + fp), Fraction(tp, n_gt)))
    return rows


def brute_force_ap(points) -> Fraction:
    """Area under the precision envelope from unordered ``(precision, recall)`` points.

    The envelope at recall ``r`` is the best precision of any point with
    recall >= r; it is constant between consecutive distinct recalls, so the
    area is a finite sum over those intervals.
    """
    recalls = sorted({r for _, r in points})
    area = Fraction(0)
    prev = Fraction(0)
    for r in recalls:
        if r == 0:
            continue
        height = max(p for p, rr in points if rr >= r)
        area += (r - prev) * height
        prev = r
    return area


def reference_hsv(rgb):
    """Floating-point HSV via colorsys, on the half-degree hue scale (unrounded)."""
    h, s, v = colorsys.rgb_to_hsv(*(c / 255 for c in rgb))
    return h * 180, s * 255, v * 255
