"""Geometry model and annotation file formats.

Boxes use a half-open continuous pixel extent: a box covering VOC pixels
``xmin..xmax`` (1-based, inclusive) is stored as ``(xmin - 1, xmax)``, so
``area = (x_max - x_min) * (y_max - y_min)`` holds without +1 corrections.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BoxOutOfFrame,
    ConfidenceOutOfRange,
    DegenerateBox,
    InvalidClassMap,
    MalformedLine,
    MalformedXml,
    MissingField,
    OutOfRange,
    UnknownClassId,
    UnknownLabel,
)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateBox(f"non-finite coordinate in {coords}")
        if min(coords) < 0:
            raise DegenerateBox(f"negative coordinate in {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DegenerateBox(f"box {coords} has non-positive area")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: str
    width: int
    height: int
    boxes: tuple[BoundingBox, ...] = ()
    # objects skipped because their label was unknown (skip mode only)
    skipped: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if not self.image_id:
            raise MissingField("image_id is empty")
        if self.width <= 0 or self.height <= 0:
            raise OutOfRange(f"image size {self.width}x{self.height} is not positive")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for box in self.boxes:
            if box.x_max > self.width or box.y_max > self.height:
                raise BoxOutOfFrame(
                    f"box {box.as_tuple()} exceeds {self.width}x{self.height} frame "
                    f"of image {self.image_id!r}"
                )


@dataclass(frozen=True, slots=True)
class Detection:
    image_id: str
    box: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfidenceOutOfRange(f"confidence {self.confidence} not in [0, 1]")

    @property
    def class_id(self) -> int:
        return self.box.class_id


class ClassMap:
    """Bijection between contiguous class ids ``0..n-1`` and unique labels."""

    __slots__ = ("_labels", "_index")

    def __init__(self, labels: Iterable[str]) -> None:
        labels = tuple(labels)
        for label in labels:
            if not isinstance(label, str) or not label.strip():
                raise InvalidClassMap(f"empty class label in {labels!r}")
        if len(set(labels)) != len(labels):
            raise InvalidClassMap(f"duplicate class labels in {labels!r}")
        self._labels = labels
        self._index = {label: i for i, label in enumerate(labels)}

    @classmethod
    def from_file(cls, path: str | Path) -> "ClassMap":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line.strip() for line in text.splitlines() if line.strip())

    def to_text(self) -> str:
        return "".join(f"{label}\n" for label in self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def id_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownLabel(f"label {label!r} is not in the class map") from None

    def label_of(self, class_id: int) -> str:
        if not (0 <= class_id < len(self._labels)):
            raise UnknownClassId(f"class id {class_id} outside 0..{len(self._labels) - 1}")
        return self._labels[class_id]

    def __contains__(self, class_id: object) -> bool:
        return isinstance(class_id, int) and 0 <= class_id < len(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(enumerate(self._labels))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ClassMap) and self._labels == other._labels

    def __hash__(self) -> int:
        return hash(self._labels)

    def __repr__(self) -> str:
        return f"ClassMap({list(self._labels)!r})"


def check_classes(img: AnnotatedImage, classes: ClassMap) -> None:
    for box in img.boxes:
        if box.class_id not in classes:
            raise UnknownClassId(
                f"class id {box.class_id} of image {img.image_id!r} outside 0..{len(classes) - 1}"
            )


# ---------------------------------------------------------------- Pascal VOC


def _child_text(elem: ET.Element, tag: str, where: str) -> str:
    child = elem.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise MissingField(f"missing <{tag}> in {where}")
    return child.text.strip()


def _number(text: str, tag: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MissingField(f"<{tag}> is not a number: {text!r}") from None
    return value


def _image_id_from_filename(filename: str) -> str:
    name = Path(filename).name
    stem, suffix = Path(name).stem, Path(name).suffix
    return stem if suffix.lower() in IMAGE_SUFFIXES else name


def parse_voc(
    xml_text: str,
    classes: ClassMap,
    *,
    image_id: str | None = None,
    skip_unknown: bool = False,
) -> AnnotatedImage:
    """Parse one Pascal VOC annotation document.

    The image id comes from ``image_id`` when given, otherwise from the
    stem of ``<filename>``. Objects with a label missing from ``classes``
    raise :class:`UnknownLabel` unless ``skip_unknown`` is set, in which
    case they are counted in ``AnnotatedImage.skipped``.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None

    size = root.find("size")
    if size is None:
        raise MissingField("missing <size>")
    width = int(_number(_child_text(size, "width", "<size>"), "width"))
    height = int(_number(_child_text(size, "height", "<size>"), "height"))

    if image_id is None:
        filename = root.findtext("filename")
        if not filename or not filename.strip():
            raise MissingField("missing <filename> and no image id given")
        image_id = _image_id_from_filename(filename.strip())

    boxes: list[BoundingBox] = []
    skipped = 0
    for n, obj in enumerate(root.findall("object")):
        where = f"<object> #{n}"
        label = _child_text(obj, "name", where)
        bndbox = obj.find("bndbox")
        if bndbox is None:
            raise MissingField(f"missing <bndbox> in {where}")
        xmin, ymin, xmax, ymax = (
            _number(_child_text(bndbox, tag, where), tag) for tag in ("xmin", "ymin", "xmax", "ymax")
        )
        try:
            class_id = classes.id_of(label)
        except UnknownLabel:
            if skip_unknown:
                skipped += 1
                continue
            raise
        if not (xmin - 1 < xmax and ymin - 1 < ymax) or min(xmin, ymin) < 1:
            raise DegenerateBox(f"{where} bndbox ({xmin}, {ymin}, {xmax}, {ymax}) is degenerate")
        boxes.append(BoundingBox(xmin - 1, ymin - 1, xmax, ymax, class_id))

    return AnnotatedImage(image_id, width, height, tuple(boxes), skipped=skipped)


def _voc_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def serialize_voc(img: AnnotatedImage, classes: ClassMap, *, image_suffix: str = ".jpg") -> str:
    """Render ``img`` as Pascal VOC XML.

    Integer corners round-trip exactly through :func:`parse_voc`; fractional
    corners are written with ``repr`` precision.
    """
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = img.image_id + image_suffix
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(img.width)
    ET.SubElement(size, "height").text = str(img.height)
    ET.SubElement(size, "depth").text = "3"
    for box in img.boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = classes.label_of(box.class_id)
        bndbox = ET.SubElement(obj, "bndbox")
        ET.SubElement(bndbox, "xmin").text = _voc_number(box.x_min + 1)
        ET.SubElement(bndbox, "ymin").text = _voc_number(box.y_min + 1)
        ET.SubElement(bndbox, "xmax").text = _voc_number(box.x_max)
        ET.SubElement(bndbox, "ymax").text = _voc_number(box.y_max)
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="unicode") + "\n"


# ---------------------------------------------------------------------- YOLO


def _yolo_number(value: float) -> str:
    # six fixed decimals when exact, otherwise the shortest round-tripping digits
    fixed = f"{value:.6f}"
    if float(fixed) == value:
        return fixed
    return np.format_float_positional(value, unique=True, trim="k", min_digits=6)


def parse_yolo_labels(text: str, width: int, height: int) -> list[BoundingBox]:
    """Parse ``class cx cy w h`` lines (normalized) into pixel-space boxes."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise MalformedLine(f"expected 5 fields, got {len(fields)}", source=f"line {lineno}")
        try:
            class_id = int(fields[0])
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError:
            raise MalformedLine(f"cannot parse {line!r}", source=f"line {lineno}") from None
        if class_id < 0:
            raise MalformedLine(f"negative class id {class_id}", source=f"line {lineno}")
        for v in (cx, cy, w, h):
            if not (0.0 <= v <= 1.0):
                raise OutOfRange(f"normalized value {v} outside [0, 1]", source=f"line {lineno}")
        x_min = max((cx - w / 2) * width, 0.0)
        y_min = max((cy - h / 2) * height, 0.0)
        x_max = min((cx + w / 2) * width, float(width))
        y_max = min((cy + h / 2) * height, float(height))
        try:
            boxes.append(BoundingBox(x_min, y_min, x_max, y_max, class_id))
        except DegenerateBox as exc:
            raise exc.with_source(f"line {lineno}") from None
    return boxes


def serialize_yolo_labels(boxes: Sequence[BoundingBox], width: int, height: int) -> str:
    lines = []
    for box in boxes:
        if box.x_max > width or box.y_max > height:
            raise BoxOutOfFrame(f"box {box.as_tuple()} exceeds {width}x{height} frame")
        cx = (box.x_min + box.x_max) / 2 / width
        cy = (box.y_min + box.y_max) / 2 / height
        w = (box.x_max - box.x_min) / width
        h = (box.y_max - box.y_min) / height
        lines.append(" ".join([str(box.class_id), *(_yolo_number(v) for v in (cx, cy, w, h))]))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------- detections


def _short(value: float) -> str:
    return np.format_float_positional(float(value), unique=True, trim="-")


def parse_detections(text: str) -> list[Detection]:
    """Parse ``image_id class_id confidence x_min y_min x_max y_max`` lines."""
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        src = f"line {lineno}"
        if len(fields) != 7:
            raise MalformedLine(f"expected 7 fields, got {len(fields)}", source=src)
        try:
            class_id = int(fields[1])
            conf = float(fields[2])
            x0, y0, x1, y1 = (float(f) for f in fields[3:])
        except ValueError:
            raise MalformedLine(f"cannot parse {line!r}", source=src) from None
        if class_id < 0:
            raise MalformedLine(f"negative class id {class_id}", source=src)
        try:
            dets.append(Detection(fields[0], BoundingBox(x0, y0, x1, y1, class_id), conf))
        except (DegenerateBox, ConfidenceOutOfRange) as exc:
            raise exc.with_source(src) from None
    return dets


def serialize_detections(dets: Iterable[Detection]) -> str:
    lines = []
    for det in dets:
        conf = f"{det.confidence:.6f}".rstrip("0").rstrip(".")
        b = det.box
        lines.append(
            f"{det.image_id} {b.class_id} {conf} "
            f"{_short(b.x_min)} {_short(b.y_min)} {_short(b.x_max)} {_short(b.y_max)}"
        )
    return "".join(line + "\n" for line in lines)


def relabel(img: AnnotatedImage, mapping: Sequence[int]) -> AnnotatedImage:
    """Rewrite every box's class id through ``mapping`` (old id -> new id)."""
    return replace(img, boxes=tuple(replace(b, class_id=mapping[b.class_id]) for b in img.boxes))
