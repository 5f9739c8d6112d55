"""Seeded synthetic pavement scenes and controlled prediction corruption.

Scenes have exact ground truth: each crack is a dark polyline drawn below
the horizon row and its box is the tight bound of the pixels it painted.
Every random stream is derived from ``(seed, index)`` only.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotations import AnnotatedImage, BoundingBox, Detection
from .errors import InfeasibleSpec
from .imageops import HsvRange, hsv_mask, rgb_to_hsv
from .metrics import iou

# magenta-ish, inside the default blackout range
DEFAULT_DISTRACTOR_HSV = HsvRange((140, 120, 120), (170, 255, 255))


@dataclass(frozen=True)
class SceneSpec:
    width: int = 600
    height: int = 600
    horizon: int = 240
    crack_count: tuple[int, int] = (1, 4)
    segments: tuple[int, int] = (2, 6)
    segment_length: tuple[float, float] = (15.0, 60.0)
    thickness: tuple[int, int] = (1, 3)
    crack_intensity: tuple[int, int] = (20, 70)
    pavement_gray: tuple[int, int] = (110, 160)
    distractor_count: tuple[int, int] = (0, 3)
    distractor_hsv: HsvRange = DEFAULT_DISTRACTOR_HSV
    brightness: float = 1.0
    n_classes: int = 7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InfeasibleSpec(f"image size {self.width}x{self.height} is not positive")
        if not (0 <= self.horizon < self.height):
            raise InfeasibleSpec(f"horizon {self.horizon} outside 0..{self.height - 1}")
        if not self.brightness > 0:
            raise InfeasibleSpec(f"brightness {self.brightness} must be positive")
        for name in ("crack_count", "segments", "thickness", "distractor_count"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise InfeasibleSpec(f"{name} range {lo}..{hi} is invalid")
        if self.thickness[0] < 1 or self.segments[0] < 1:
            raise InfeasibleSpec("thickness and segment counts start at 1")
        if self.n_classes < 1:
            raise InfeasibleSpec("n_classes must be at least 1")
        if self.crack_count[1] > 0:
            room = self.height - self.horizon
            if room < 2 * self.thickness[1] + 2 or self.width < 2 * self.thickness[1] + 2:
                raise InfeasibleSpec(
                    f"{room} pavement rows cannot hold cracks of thickness {self.thickness[1]}"
                )


def _rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), index, stream]))


def _color_in_range(rng: np.random.Generator, hsv_range: HsvRange) -> tuple[int, int, int]:
    (h0, s0, v0), (h1, s1, v1) = hsv_range.lower, hsv_range.upper
    for _ in range(1000):
        h = rng.uniform(h0, h1 + 1) * 2 / 360
        s = rng.uniform(s0, s1 + 1) / 255
        v = rng.uniform(v0, v1 + 1) / 255
        rgb = tuple(int(round(c * 255)) for c in colorsys.hsv_to_rgb(min(h, 1.0), min(s, 1.0), min(v, 1.0)))
        hh, ss, vv = rgb_to_hsv(rgb)
        if h0 <= hh <= h1 and s0 <= ss <= s1 and v0 <= vv <= v1:
            return rgb
    raise InfeasibleSpec(f"no RGB colour found inside {hsv_range}")


def _stamp_polyline(mask: np.ndarray, points: np.ndarray, thickness: int) -> None:
    half_lo = (thickness - 1) // 2
    half_hi = thickness // 2
    h, w = mask.shape
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        n = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 1
        xs = np.rint(np.linspace(x0, x1, n + 1)).astype(int)
        ys = np.rint(np.linspace(y0, y1, n + 1)).astype(int)
        for dy in range(-half_lo, half_hi + 1):
            for dx in range(-half_lo, half_hi + 1):
                mask[np.clip(ys + dy, 0, h - 1), np.clip(xs + dx, 0, w - 1)] = True


def generate_scene(spec: SceneSpec, index: int = 0) -> tuple[np.ndarray, AnnotatedImage]:
    """Render scene ``index`` of the stream defined by ``spec.seed``."""
    rng = _rng(spec.seed, index)
    w, h, horizon = spec.width, spec.height, spec.horizon

    img = np.empty((h, w, 3), dtype=np.float64)
    sky = np.array([150.0, 180.0, 215.0])
    img[:horizon] = sky + rng.normal(0, 4, size=(horizon, w, 3))
    gray = rng.uniform(*spec.pavement_gray)
    shade = gray + rng.normal(0, 6, size=(h - horizon, w, 1))
    img[horizon:] = shade + rng.normal(0, 2, size=(h - horizon, w, 3))

    boxes = []
    n_cracks = int(rng.integers(spec.crack_count[0], spec.crack_count[1] + 1))
    for _ in range(n_cracks):
        t = int(rng.integers(spec.thickness[0], spec.thickness[1] + 1))
        # keep every stamped pixel inside the pavement rows
        y_lo, y_hi = horizon + t, h - 1 - t
        x_lo, x_hi = t, w - 1 - t
        n_seg = int(rng.integers(spec.segments[0], spec.segments[1] + 1))
        pts = [(rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi))]
        heading = rng.uniform(0, 2 * np.pi)
        for _ in range(n_seg):
            heading += rng.normal(0, 0.6)
            length = rng.uniform(*spec.segment_length)
            x = float(np.clip(pts[-1][0] + length * np.cos(heading), x_lo, x_hi))
            y = float(np.clip(pts[-1][1] + length * np.sin(heading), y_lo, y_hi))
            pts.append((x, y))
        mask = np.zeros((h, w), dtype=bool)
        _stamp_polyline(mask, np.array(pts), t)
        img[mask] = rng.uniform(*spec.crack_intensity)
        ys, xs = np.nonzero(mask)
        cls = int(rng.integers(0, spec.n_classes))
        boxes.append(BoundingBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1), cls))

    img = np.clip(np.rint(img * spec.brightness), 0, 255).astype(np.uint8)

    n_distractors = int(rng.integers(spec.distractor_count[0], spec.distractor_count[1] + 1))
    if horizon >= 4:
        for _ in range(n_distractors):
            color = _color_in_range(rng, spec.distractor_hsv)
            dw = int(rng.integers(4, max(5, w // 6)))
            dh = int(rng.integers(2, max(3, horizon // 2)))
            x0 = int(rng.integers(0, max(1, w - dw)))
            y0 = int(rng.integers(0, max(1, horizon - dh)))
            img[y0 : y0 + dh, x0 : x0 + dw] = color

    image_id = f"synth_{spec.seed}_{index:05d}"
    return img, AnnotatedImage(image_id, w, h, tuple(boxes))


def distractor_mask(img: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """Pixels whose colour lies in the distractor range (what blackout keys on)."""
    return hsv_mask(img, spec.distractor_hsv)


@dataclass(frozen=True)
class CorruptionSpec:
    """How to turn ground truth into imperfect predictions.

    ``confidence`` and ``fp_confidence`` are uniform ranges for kept and
    injected detections; equal bounds give a fixed value. Confidences are
    rounded to six decimals so they survive the detection file format.
    """

    drop_count: int = 0
    inject_count: int = 0
    jitter: float = 0.0
    confidence: tuple[float, float] = (0.5, 1.0)
    fp_confidence: tuple[float, float] = (0.3, 1.0)
    fp_size: tuple[int, int] = (8, 60)
    n_classes: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.drop_count < 0 or self.inject_count < 0 or self.jitter < 0:
            raise InfeasibleSpec("drop_count, inject_count and jitter must be non-negative")
        for lo, hi in (self.confidence, self.fp_confidence):
            if not (0 <= lo <= hi <= 1):
                raise InfeasibleSpec(f"confidence range {lo}..{hi} outside [0, 1]")


@dataclass(frozen=True)
class CorruptionResult:
    detections: tuple[Detection, ...]
    tp: int
    fp: int
    fn: int
    # per detection: (image index, box index) of its source ground truth, None if injected
    sources: tuple[tuple[int, int] | None, ...] = field(repr=False, default=())
    dropped: frozenset[tuple[int, int]] = field(repr=False, default=frozenset())


def _jitter_box(rng: np.random.Generator, box: BoundingBox, amount: float, w: int, h: int) -> BoundingBox:
    if amount == 0:
        return box
    d = rng.uniform(-amount, amount, size=4)
    x0 = min(max(box.x_min + d[0], 0.0), w)
    y0 = min(max(box.y_min + d[1], 0.0), h)
    x1 = min(max(box.x_max + d[2], 0.0), w)
    y1 = min(max(box.y_max + d[3], 0.0), h)
    if not (x0 < x1 and y0 < y1):
        return box
    return BoundingBox(x0, y0, x1, y1, box.class_id)


def corrupt_predictions(gt: Sequence[AnnotatedImage], spec: CorruptionSpec) -> CorruptionResult:
    """Derive detections from ground truth with a known number of errors.

    ``drop_count`` ground truths get no detection (false negatives),
    every other one gets a jittered copy, and ``inject_count`` boxes with
    zero overlap against all ground truth of their image are added as
    false positives. The intended counts are returned with the detections.
    """
    refs = [(i, j) for i, img in enumerate(gt) for j in range(len(img.boxes))]
    if spec.drop_count > len(refs):
        raise InfeasibleSpec(f"cannot drop {spec.drop_count} of {len(refs)} ground truths")
    if spec.inject_count and not gt:
        raise InfeasibleSpec("cannot inject false positives without images")
    rng = _rng(spec.seed, 0, 1)
    drop_idx = rng.choice(len(refs), size=spec.drop_count, replace=False) if spec.drop_count else []
    dropped = frozenset(refs[k] for k in drop_idx)
    n_classes = spec.n_classes or 1 + max((b.class_id for img in gt for b in img.boxes), default=0)

    dets: list[Detection] = []
    sources: list[tuple[int, int] | None] = []
    for i, j in refs:
        if (i, j) in dropped:
            continue
        img = gt[i]
        box = _jitter_box(rng, img.boxes[j], spec.jitter, img.width, img.height)
        conf = round(float(rng.uniform(*spec.confidence)), 6)
        dets.append(Detection(img.image_id, box, conf))
        sources.append((i, j))

    lo, hi = spec.fp_size
    for _ in range(spec.inject_count):
        for _attempt in range(1000):
            img = gt[int(rng.integers(0, len(gt)))]
            bw = int(rng.integers(lo, hi + 1))
            bh = int(rng.integers(lo, hi + 1))
            if bw >= img.width or bh >= img.height:
                continue
            x0 = float(rng.integers(0, img.width - bw + 1))
            y0 = float(rng.integers(0, img.height - bh + 1))
            box = BoundingBox(x0, y0, x0 + bw, y0 + bh, int(rng.integers(0, n_classes)))
            if all(iou(box, g) == 0.0 for g in img.boxes):
                break
        else:
            raise InfeasibleSpec("could not place a false positive clear of every ground truth")
        conf = round(float(rng.uniform(*spec.fp_confidence)), 6)
        dets.append(Detection(img.image_id, box, conf))
        sources.append(None)

    n_tp = len(refs) - len(dropped)
    return CorruptionResult(tuple(dets), n_tp, spec.inject_count, len(dropped), tuple(sources), dropped)
