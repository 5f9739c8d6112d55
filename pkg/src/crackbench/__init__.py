"""Pavement-crack dataset preprocessing and detection evaluation."""

__version__ = "0.1.0"

from .annotations import (
    AnnotatedImage,
    BoundingBox,
    ClassMap,
    Detection,
    parse_detections,
    parse_voc,
    parse_yolo_labels,
    serialize_detections,
    serialize_voc,
    serialize_yolo_labels,
)
from .datasetops import (
    DatasetManifest,
    MergeRule,
    build_manifest,
    class_histogram,
    merge_classes,
    split_dataset,
)
from .imageops import CropSpec, HsvRange, crop_bottom, hsv_blackout, remap_boxes_after_crop, rgb_to_hsv
from .metrics import EvalReport, average_precision, evaluate, f1, iou, match_detections, pr_curve
from .report import TechniqueRun, compare, narrate, render

__all__ = [
    "AnnotatedImage", "BoundingBox", "ClassMap", "CropSpec", "DatasetManifest", "Detection",
    "EvalReport", "HsvRange", "MergeRule", "TechniqueRun", "average_precision", "build_manifest",
    "class_histogram", "compare", "crop_bottom", "evaluate", "f1", "hsv_blackout", "iou",
    "match_detections", "merge_classes", "narrate", "parse_detections", "parse_voc",
    "parse_yolo_labels", "pr_curve", "remap_boxes_after_crop", "render", "rgb_to_hsv",
    "serialize_detections", "serialize_voc", "serialize_yolo_labels", "split_dataset",
]
