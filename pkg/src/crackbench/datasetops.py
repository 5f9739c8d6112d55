"""Dataset manifests, class statistics, class merging and seeded splitting."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .annotations import (
    IMAGE_SUFFIXES,
    AnnotatedImage,
    ClassMap,
    check_classes,
    parse_voc,
    parse_yolo_labels,
    relabel,
)
from .errors import CrackbenchError, EmptyManifest, OrphanImage, OutOfRange, UnmappedClass, UnreadableFile
from .imageops import image_size

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "unassigned")
MANIFEST_HEADER = ("image_id", "image_path", "annotation_path", "width", "height", "split")
ANNOTATION_SUFFIXES = (".xml", ".txt")

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    image_path: Path
    annotation_path: Path
    width: int
    height: int
    split: str = "unassigned"
    annotation: AnnotatedImage | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise OutOfRange(f"unknown split {self.split!r} for {self.image_id!r}")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]
    classes: ClassMap
    orphans: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise OutOfRange(f"duplicate image ids in manifest: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def annotations(self) -> list[AnnotatedImage]:
        return [load_annotation(r, self.classes) for r in self.records]


def load_annotation(record: ManifestRecord, classes: ClassMap, *, skip_unknown: bool = False) -> AnnotatedImage:
    """Return the record's ground truth, parsing its annotation file if not cached."""
    if record.annotation is not None:
        return record.annotation
    path = Path(record.annotation_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(exc.strerror or str(exc), source=str(path)) from None
    try:
        if path.suffix.lower() == ".xml":
            img = parse_voc(text, classes, image_id=record.image_id, skip_unknown=skip_unknown)
        else:
            boxes = parse_yolo_labels(text, record.width, record.height)
            img = AnnotatedImage(record.image_id, record.width, record.height, tuple(boxes))
            check_classes(img, classes)
    except CrackbenchError as exc:
        raise exc.with_source(str(path)) from None
    return img


def _index_dir(directory: Path, suffixes: Sequence[str]) -> dict[str, Path]:
    if not directory.is_dir():
        raise UnreadableFile("not a readable directory", source=str(directory))
    found: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in suffixes:
            # first suffix in preference order wins on stem collisions
            prev = found.get(p.stem)
            if prev is None or suffixes.index(p.suffix.lower()) < suffixes.index(prev.suffix.lower()):
                found[p.stem] = p
    return found


def build_manifest(
    image_dir: str | Path,
    annotation_dir: str | Path,
    classes: ClassMap,
    *,
    orphans: str = "warn",
    skip_unknown: bool = False,
    workers: int = 1,
) -> DatasetManifest:
    """Pair images with same-stem VOC (``.xml``) or YOLO (``.txt``) annotations.

    Records are sorted by image id. Images without an annotation are
    collected in ``manifest.orphans``; with ``orphans="error"`` they raise
    :class:`OrphanImage` instead.
    """
    images = _index_dir(Path(image_dir), IMAGE_SUFFIXES)
    annots = _index_dir(Path(annotation_dir), ANNOTATION_SUFFIXES)
    missing = sorted(stem for stem in images if stem not in annots)
    if missing:
        if orphans == "error":
            raise OrphanImage(f"{len(missing)} image(s) without annotation, e.g. {missing[:3]}")
        log.warning("%d image(s) without annotation skipped", len(missing))

    stems = sorted(stem for stem in images if stem in annots)

    def make(stem: str) -> ManifestRecord:
        ann_path = annots[stem]
        if ann_path.suffix.lower() == ".txt":
            width, height = image_size(images[stem])
        else:
            width = height = 1  # replaced from <size> below
        rec = ManifestRecord(stem, images[stem], ann_path, width, height)
        img = load_annotation(rec, classes, skip_unknown=skip_unknown)
        if img.skipped:
            log.warning("%s: skipped %d object(s) with unknown labels", ann_path, img.skipped)
        return replace(rec, width=img.width, height=img.height, annotation=img)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(make, stems))
    else:
        records = [make(stem) for stem in stems]
    return DatasetManifest(tuple(records), classes, orphans=tuple(missing))


def manifest_to_csv(manifest: DatasetManifest, base_dir: str | Path | None = None) -> str:
    """Render the manifest CSV; paths are written relative to ``base_dir`` when given."""

    def rel(p: Path) -> str:
        if base_dir is None:
            return Path(p).as_posix()
        return Path(os.path.relpath(Path(p).absolute(), Path(base_dir).absolute())).as_posix()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for r in manifest.records:
        writer.writerow([r.image_id, rel(r.image_path), rel(r.annotation_path), r.width, r.height, r.split])
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.write_text(manifest_to_csv(manifest, path.parent), encoding="utf-8", newline="")


def read_manifest(path: str | Path, classes: ClassMap) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(exc.strerror or str(exc), source=str(path)) from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise UnreadableFile(f"manifest header must be {','.join(MANIFEST_HEADER)}", source=f"{path}:1")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            image_id, image_path, ann_path, width, height, split = row
            records.append(
                ManifestRecord(
                    image_id, path.parent / image_path, path.parent / ann_path, int(width), int(height), split
                )
            )
        except ValueError as exc:
            raise UnreadableFile(f"bad manifest row: {exc}", source=f"{path}:{lineno}") from None
        except CrackbenchError as exc:
            raise exc.with_source(f"{path}:{lineno}") from None
    return DatasetManifest(tuple(records), classes)


# ----------------------------------------------------------------- histogram


@dataclass(frozen=True)
class ClassHistogram:
    classes: ClassMap
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_dict(self) -> dict[str, int]:
        return {label: self.counts[i] for i, label in self.classes}

    def to_csv(self) -> str:
        lines = ["class_id,label,count"]
        lines += [f"{i},{label},{self.counts[i]}" for i, label in self.classes]
        lines.append(f",total,{self.total}")
        return "\n".join(lines) + "\n"

    def bar_chart(self, width: int = 40) -> str:
        """Plain-text horizontal bar chart, one row per class."""
        peak = max(self.counts, default=0) or 1
        pad = max((len(label) for _, label in self.classes), default=0)
        rows = []
        for i, label in self.classes:
            n = self.counts[i]
            bar = "#" * round(width * n / peak)
            rows.append(f"{label:<{pad}} | {bar} {n}")
        return "\n".join(rows) + "\n"


def class_histogram(manifest: DatasetManifest) -> ClassHistogram:
    counts = [0] * len(manifest.classes)
    for img in manifest.annotations():
        for box in img.boxes:
            counts[box.class_id] += 1
    return ClassHistogram(manifest.classes, tuple(counts))


# ------------------------------------------------------------------- merging


@dataclass(frozen=True)
class MergeRule:
    mapping: tuple[int, ...]
    classes: ClassMap

    def __post_init__(self) -> None:
        object.__setattr__(self, "mapping", tuple(self.mapping))
        targets = set(self.mapping)
        if targets != set(range(len(self.classes))):
            raise UnmappedClass(
                f"merge targets {sorted(targets)} are not exactly 0..{len(self.classes) - 1}"
            )

    @classmethod
    def from_pairs(cls, source: ClassMap, pairs: Mapping[str, str]) -> "MergeRule":
        """Build a rule from ``source label -> target label`` pairs.

        Target ids follow first appearance when walking the source classes
        in id order.
        """
        unknown = sorted(set(pairs) - set(source.labels))
        if unknown:
            raise UnmappedClass(f"merge rule names unknown source labels {unknown}")
        targets: list[str] = []
        mapping = []
        for _, label in source:
            if label not in pairs:
                raise UnmappedClass(f"class {label!r} has no merge target")
            target = pairs[label]
            if target not in targets:
                targets.append(target)
            mapping.append(targets.index(target))
        return cls(tuple(mapping), ClassMap(targets))


def merge_classes(manifest: DatasetManifest, rule: MergeRule) -> DatasetManifest:
    """Rewrite every box's class through ``rule``; geometry and splits are untouched."""
    if len(rule.mapping) != len(manifest.classes):
        raise UnmappedClass(
            f"merge rule covers {len(rule.mapping)} classes, manifest has {len(manifest.classes)}"
        )
    records = []
    for rec in manifest.records:
        img = relabel(load_annotation(rec, manifest.classes), rule.mapping)
        records.append(replace(rec, annotation=img))
    return DatasetManifest(tuple(records), rule.classes, orphans=manifest.orphans)


# ------------------------------------------------------------------ splitting


class SplitMix64:
    """splitmix64 generator; ``next()`` yields unsigned 64-bit integers."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def shuffle(items: list, seed: int) -> list:
    """Fisher-Yates, descending: for i = n-1..1 swap items[i] with items[next() % (i + 1)]."""
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    train, val, _ = (Fraction(repr(float(r))) for r in ratios)
    n_train = math.floor(train * n)
    n_val = math.floor(val * n)
    return n_train, n_val, n - n_train - n_val


def _check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(not (r > 0) for r in ratios):
        raise OutOfRange(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise OutOfRange(f"split ratios sum to {sum(ratios)}, expected 1")


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    *,
    balance_test: bool = False,
) -> DatasetManifest:
    """Assign train/val/test by a seeded permutation of the id-sorted records.

    The first ``floor(train * n)`` permuted records go to train, the next
    ``floor(val * n)`` to val, the rest to test. The result depends only on
    the set of image ids, the ratios and the seed.

    With ``balance_test`` the test split is then capped per class, see
    :func:`balance_split`.
    """
    _check_ratios(ratios)
    if not manifest.records:
        raise EmptyManifest("cannot split an empty manifest")
    ordered = sorted(manifest.records, key=lambda r: r.image_id)
    permuted = shuffle(ordered, seed)
    n_train, n_val, _ = split_sizes(len(permuted), ratios)
    assigned = {}
    for k, rec in enumerate(permuted):
        name = "train" if k < n_train else "val" if k < n_train + n_val else "test"
        assigned[rec.image_id] = name
    records = tuple(replace(r, split=assigned[r.image_id]) for r in ordered)
    out = DatasetManifest(records, manifest.classes, orphans=manifest.orphans)
    if balance_test:
        out = balance_split(out, "test", seed)
    return out


def _dominant_class(img: AnnotatedImage) -> int | None:
    if not img.boxes:
        return None
    counts: dict[int, int] = {}
    for box in img.boxes:
        counts[box.class_id] = counts.get(box.class_id, 0) + 1
    return min(counts, key=lambda c: (-counts[c], c))


def balance_split(manifest: DatasetManifest, split: str, seed: int) -> DatasetManifest:
    """Cap every class in ``split`` at the image count of its rarest present class.

    Each image is keyed by its most frequent class (ties to the lower id).
    Surplus images are chosen by a seeded shuffle and marked unassigned;
    images without boxes are left alone.
    """
    groups: dict[int, list[str]] = {}
    for rec in manifest.split(split):
        cls = _dominant_class(load_annotation(rec, manifest.classes))
        if cls is not None:
            groups.setdefault(cls, []).append(rec.image_id)
    if not groups:
        return manifest
    cap = min(len(ids) for ids in groups.values())
    dropped: set[str] = set()
    for cls in sorted(groups):
        ids = shuffle(sorted(groups[cls]), seed ^ (0xB5AD4ECEDA1CE2A9 + cls))
        dropped.update(ids[cap:])
    records = tuple(replace(r, split="unassigned") if r.image_id in dropped else r for r in manifest.records)
    return DatasetManifest(records, manifest.classes, orphans=manifest.orphans)


def split_counts(manifest: DatasetManifest) -> dict[str, int]:
    counts = dict.fromkeys(SPLITS, 0)
    for r in manifest.records:
        counts[r.split] += 1
    return counts


def records_by_id(records: Iterable[ManifestRecord]) -> dict[str, ManifestRecord]:
    return {r.image_id: r for r in records}
