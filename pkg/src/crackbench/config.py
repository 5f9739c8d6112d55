"""Pipeline configuration (TOML) with validation and flag overrides."""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .annotations import ClassMap
from .datasetops import MergeRule
from .errors import ConfigInvalid, CrackbenchError
from .imageops import CropSpec, HsvRange

ENV_CONFIG = "CRACKBENCH_CONFIG"

# RDD road-damage codes; configurable, see [classes] labels
DEFAULT_LABELS = ("D00", "D10", "D20", "D40", "D43", "D44", "D50")


@dataclass(frozen=True)
class PipelineConfig:
    labels: tuple[str, ...] = DEFAULT_LABELS
    crop_width: int = 600
    crop_height: int = 420
    min_visible_fraction: float = 0.25
    hsv_lower: tuple[int, int, int] = (127, 36, 33)
    hsv_upper: tuple[int, int, int] = (179, 255, 255)
    keep_inside: bool = True
    merge: dict[str, str] = field(default_factory=dict)
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    balance_test: bool = False
    iou_threshold: float = 0.5
    confidence_threshold: float = 0.25
    ap_method: str = "all"
    aggregation: str = "macro"
    baseline: str = "baseline"
    skip_unknown: bool = False
    workers: int | None = None
    source: str | None = None

    @property
    def classes(self) -> ClassMap:
        return ClassMap(self.labels)

    @property
    def crop(self) -> CropSpec:
        return CropSpec(self.crop_width, self.crop_height)

    @property
    def hsv_range(self) -> HsvRange:
        return HsvRange(self.hsv_lower, self.hsv_upper)

    def merge_rule(self, classes: ClassMap | None = None) -> MergeRule:
        return MergeRule.from_pairs(classes or self.classes, self.merge)

    def override(self, **values: Any) -> "PipelineConfig":
        """Apply non-None overrides and re-validate."""
        cfg = replace(self, **{k: v for k, v in values.items() if v is not None})
        validate(cfg)
        return cfg


def _tuple_of(kind, n=None):
    def conv(v):
        if not isinstance(v, list) or (n is not None and len(v) != n):
            raise ValueError(f"expected a list of {n or 'some'} {kind.__name__} values")
        if kind is float:
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise ValueError("expected numbers")
            return tuple(float(x) for x in v)
        if not all(isinstance(x, kind) and not isinstance(x, bool) for x in v):
            raise ValueError(f"expected {kind.__name__} values")
        return tuple(v)

    return conv


def _scalar(kind):
    def conv(v):
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            return float(v)
        if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
            raise ValueError(f"expected {kind.__name__}")
        return v

    return conv


def _str_map(v):
    if not isinstance(v, dict) or not all(isinstance(a, str) and isinstance(b, str) for a, b in v.items()):
        raise ValueError("expected label = \"target\" string pairs")
    return dict(v)


# table -> key -> (attribute, converter)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "classes": {"labels": ("labels", _tuple_of(str)), "skip_unknown": ("skip_unknown", _scalar(bool))},
    "crop": {
        "width": ("crop_width", _scalar(int)),
        "height": ("crop_height", _scalar(int)),
        "min_visible_fraction": ("min_visible_fraction", _scalar(float)),
    },
    "blackout": {
        "lower": ("hsv_lower", _tuple_of(int, 3)),
        "upper": ("hsv_upper", _tuple_of(int, 3)),
        "keep_inside": ("keep_inside", _scalar(bool)),
    },
    "merge": {"rules": ("merge", _str_map)},
    "split": {
        "ratios": ("ratios", _tuple_of(float, 3)),
        "seed": ("seed", _scalar(int)),
        "balance_test": ("balance_test", _scalar(bool)),
    },
    "eval": {
        "iou_threshold": ("iou_threshold", _scalar(float)),
        "confidence_threshold": ("confidence_threshold", _scalar(float)),
        "ap_method": ("ap_method", _scalar(str)),
        "aggregation": ("aggregation", _scalar(str)),
    },
    "report": {"baseline": ("baseline", _scalar(str))},
    "run": {"workers": ("workers", _scalar(int))},
}

ATTR_LOCATION = {attr: (table, key) for table, keys in SCHEMA.items() for key, (attr, _) in keys.items()}


def _key_line(text: str, table: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\[\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            continue
        if current == table and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return lineno
    return None


def _fail(message: str, source: str | None, text: str | None, attr: str | None) -> ConfigInvalid:
    where = source
    if text is not None and attr in ATTR_LOCATION:
        table, key = ATTR_LOCATION[attr]
        line = _key_line(text, table, key)
        if line is not None:
            where = f"{source}:{line}"
        message = f"[{table}] {key}: {message}"
    return ConfigInvalid(message, source=where)


def validate(cfg: PipelineConfig, text: str | None = None) -> None:
    """Check every component-level invariant, raising :class:`ConfigInvalid`."""
    src = cfg.source or "<config>"

    def check(attr: str, ok: bool, message: str) -> None:
        if not ok:
            raise _fail(message, src, text, attr)

    def attempt(attr: str, build) -> Any:
        try:
            return build()
        except CrackbenchError as exc:
            raise _fail(exc.message, src, text, attr) from None

    classes = attempt("labels", lambda: ClassMap(cfg.labels))
    attempt("crop_height", lambda: CropSpec(cfg.crop_width, cfg.crop_height))
    check("min_visible_fraction", 0 < cfg.min_visible_fraction <= 1, "must be in (0, 1]")
    attempt("hsv_lower", lambda: HsvRange(cfg.hsv_lower, cfg.hsv_upper))
    if cfg.merge:
        attempt("merge", lambda: MergeRule.from_pairs(classes, cfg.merge))
    check("ratios", len(cfg.ratios) == 3 and all(r > 0 for r in cfg.ratios), "ratios must be positive")
    check("ratios", abs(sum(cfg.ratios) - 1.0) <= 1e-9, f"ratios sum to {sum(cfg.ratios)}, expected 1")
    check("seed", 0 <= cfg.seed < 2**64, "seed must be an unsigned 64-bit integer")
    check("iou_threshold", 0 < cfg.iou_threshold <= 1, "must be in (0, 1]")
    check("confidence_threshold", 0 <= cfg.confidence_threshold <= 1, "must be in [0, 1]")
    check("ap_method", cfg.ap_method in ("all", "101"), "must be \"all\" or \"101\"")
    check("aggregation", cfg.aggregation in ("macro", "micro"), "must be \"macro\" or \"micro\"")
    check("workers", cfg.workers is None or cfg.workers >= 1, "must be at least 1")


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load and validate a TOML config; ``None`` gives the built-in defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(exc.strerror or str(exc), source=str(path)) from None
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(str(exc), source=source) from None
    values: dict[str, Any] = {}
    for table, entries in data.items():
        if table not in SCHEMA:
            raise ConfigInvalid(f"unknown table [{table}]", source=source)
        if not isinstance(entries, dict):
            raise ConfigInvalid(f"[{table}] must be a table", source=source)
        for key, raw in entries.items():
            if key not in SCHEMA[table]:
                line = _key_line(text, table, key)
                raise ConfigInvalid(f"unknown key {key!r} in [{table}]", source=f"{source}:{line}" if line else source)
            attr, conv = SCHEMA[table][key]
            try:
                values[attr] = conv(raw)
            except ValueError as exc:
                raise _fail(str(exc), source, text, attr) from None
    cfg = PipelineConfig(**values, source=source)
    validate(cfg, text)
    return cfg
