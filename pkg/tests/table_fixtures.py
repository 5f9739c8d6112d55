"""Published baseline/technique metric rows (percent) used as fixtures."""

from crackbench.metrics import Averages, EvalReport

CONFIG = {"iou_threshold": 0.5, "confidence_threshold": 0.25, "ap_method": "all", "classes": ["D00"]}

# (technique, model, mAP, precision, recall, F1)
ROWS = [
    ("baseline", "YOLOv5", 61.6, 64.6, 60.1, 62.3),
    ("baseline", "YOLOv8", 62.2, 65.0, 61.0, 62.9),
    ("merge", "YOLOv5", 58.3, 63.0, 55.3, 58.9),
    ("merge", "YOLOv8", 60.0, 64.4, 56.7, 60.3),
    ("blackout", "YOLOv5", 60.5, 63.7, 58.9, 61.2),
    ("blackout", "YOLOv8", 62.4, 66.1, 58.8, 62.2),
    ("blackout+merge", "YOLOv5", 57.2, 63.0, 54.2, 58.3),
    ("blackout+merge", "YOLOv8", 58.8, 67.3, 54.1, 59.9),
    ("crop-420", "YOLOv5", 61.5, 60.7, 63.5, 62.1),
    ("crop-420", "YOLOv8", 63.4, 66.9, 58.7, 62.5),
    ("crop-330", "YOLOv5", 60.9, 60.9, 59.3, 60.1),
    ("crop-330", "YOLOv8", 63.0, 67.3, 58.7, 62.7),
]


def report(map_pct, p_pct, r_pct, f_pct, config=CONFIG):
    avg = Averages(p_pct / 100, r_pct / 100, f_pct / 100)
    return EvalReport((), map_pct / 100, avg, avg, 0, 0, 0, dict(config))


def runs():
    from crackbench.report import TechniqueRun

    return [TechniqueRun(t, m, report(*vals)) for t, m, *vals in ROWS]
