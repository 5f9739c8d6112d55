"""Technique comparison tables, rendering and narration."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigMismatch, MalformedLine
from .metrics import EvalReport, report_from_json

METRICS = ("map", "precision", "recall", "f1")
METRIC_TITLES = {"map": "MAP", "precision": "Precision", "recall": "Recall", "f1": "F1-Score"}
# configuration keys that must agree across compared runs
SHARED_CONFIG = ("iou_threshold", "confidence_threshold", "ap_method", "classes")
SAME_BAND_PP = 0.05

TECHNIQUE_TITLES = {
    "baseline": "Baseline",
    "merge": "Merging Classes",
    "blackout": "Blackout",
    "blackout+merge": "Blackout Merging",
    "crop-420": "First Cropping Size",
    "crop-330": "Second Cropping Size",
}


@dataclass(frozen=True)
class TechniqueRun:
    technique: str
    model: str
    report: EvalReport


@dataclass(frozen=True)
class ComparisonRow:
    technique: str
    model: str
    baseline: str
    values: tuple[float, ...]  # map, precision, recall, f1 as fractions in [0, 1]
    deltas: tuple[float, ...]  # values minus the baseline's values

    def delta_pp(self, metric: str) -> float:
        return self.deltas[METRICS.index(metric)] * 100


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]
    aggregation: str = "macro"

    def __add__(self, other: "ComparisonTable") -> "ComparisonTable":
        if self.aggregation != other.aggregation:
            raise ConfigMismatch("cannot join tables with different aggregation")
        return ComparisonTable(self.rows + other.rows, self.aggregation)

    def row(self, technique: str, model: str) -> ComparisonRow:
        for r in self.rows:
            if r.technique == technique and r.model == model:
                return r
        raise KeyError((technique, model))


def _values(run: TechniqueRun, aggregation: str) -> tuple[float, ...]:
    return tuple(run.report.metric(m, aggregation) for m in METRICS)


def compare(
    baseline: TechniqueRun, variants: Sequence[TechniqueRun], aggregation: str = "macro"
) -> ComparisonTable:
    """Tabulate variants against a baseline with signed metric deltas."""
    seen = {(baseline.technique, baseline.model)}
    for run in variants:
        key = (run.technique, run.model)
        if key in seen:
            raise ConfigMismatch(f"duplicate run {key}")
        seen.add(key)
        for name in SHARED_CONFIG:
            a, b = baseline.report.config.get(name), run.report.config.get(name)
            if a != b:
                raise ConfigMismatch(
                    f"{run.technique}/{run.model} has {name}={b!r}, baseline has {a!r}"
                )
    base = _values(baseline, aggregation)
    rows = [ComparisonRow(baseline.technique, baseline.model, baseline.technique, base, (0.0,) * 4)]
    for run in variants:
        vals = _values(run, aggregation)
        rows.append(
            ComparisonRow(
                run.technique, run.model, baseline.technique, vals,
                tuple(v - b for v, b in zip(vals, base)),
            )
        )
    return ComparisonTable(tuple(rows), aggregation)


def compare_runs(
    runs: Iterable[TechniqueRun], baseline: str = "baseline", aggregation: str = "macro"
) -> ComparisonTable:
    """Compare every model's runs against that model's ``baseline`` run.

    Rows are grouped technique-first: all baselines, then each technique in
    order of first appearance, models in order of first appearance.
    """
    runs = list(runs)
    models = list(dict.fromkeys(r.model for r in runs))
    techniques = list(dict.fromkeys(r.technique for r in runs if r.technique != baseline))
    per_model: dict[str, ComparisonTable] = {}
    for model in models:
        mine = [r for r in runs if r.model == model]
        bases = [r for r in mine if r.technique == baseline]
        if len(bases) != 1:
            raise ConfigMismatch(f"model {model!r} needs exactly one {baseline!r} run, found {len(bases)}")
        per_model[model] = compare(bases[0], [r for r in mine if r.technique != baseline], aggregation)
    rows = []
    for technique in [baseline, *techniques]:
        for model in models:
            rows += [r for r in per_model[model].rows if r.technique == technique]
    table = ComparisonTable(tuple(rows), aggregation)
    # baselines must share configuration across models too
    if len(models) > 1:
        first = next(r for r in runs if r.technique == baseline)
        compare(first, [r for r in runs if r is not first and r.technique == baseline])
    return table


def round_half_away(value: float, places: int = 1) -> Decimal:
    q = Decimal(1).scaleb(-places)
    out = Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP)
    return abs(out) if out == 0 else out  # no "-0.0"


def _pct(value: float) -> str:
    return f"{round_half_away(value * 100)}"


def _signed(delta: float) -> str:
    d = round_half_away(delta * 100)
    return f"+{d}" if d > 0 else f"{d}"


def technique_title(technique: str) -> str:
    return TECHNIQUE_TITLES.get(technique, technique)


def render(table: ComparisonTable, format: str = "markdown") -> str:
    if format == "markdown":
        return _render_markdown(table)
    if format == "csv":
        return _render_csv(table)
    raise ValueError(f"unknown format {format!r}")


def _render_markdown(table: ComparisonTable) -> str:
    head = ["Technique", "Model", *(METRIC_TITLES[m] for m in METRICS)]
    head += [f"Δ{METRIC_TITLES[m]}" for m in METRICS]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] * 2 + ["---:"] * 8) + "|"]
    prev = None
    for row in table.rows:
        label = "" if row.technique == prev else technique_title(row.technique)
        prev = row.technique
        m, p, r, f = row.values
        cells = [label, row.model, _pct(m) + "%", _pct(p) + "%", _pct(r) + "%", _pct(f)]
        cells += [_signed(d) for d in row.deltas]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


CSV_HEADER = ("technique", "model", "baseline", *METRICS, *(f"delta_{m}" for m in METRICS), "aggregation")


def _render_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in table.rows:
        writer.writerow(
            [row.technique, row.model, row.baseline, *map(repr, row.values), *map(repr, row.deltas), table.aggregation]
        )
    return buf.getvalue()


def load_comparison_csv(text: str) -> ComparisonTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise MalformedLine("comparison CSV header mismatch", source="line 1")
    out = []
    aggregation = "macro"
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise MalformedLine(f"expected {len(CSV_HEADER)} fields, got {len(row)}", source=f"line {lineno}")
        try:
            nums = [float(v) for v in row[3:11]]
        except ValueError:
            raise MalformedLine("non-numeric metric", source=f"line {lineno}") from None
        out.append(ComparisonRow(row[0], row[1], row[2], tuple(nums[:4]), tuple(nums[4:])))
        aggregation = row[11]
    return ComparisonTable(tuple(out), aggregation)


def classify(delta_pp: float, band: float = SAME_BAND_PP) -> str:
    """``"improved"``, ``"decreased"`` or ``"same"`` for a percentage-point delta."""
    if abs(delta_pp) < band:
        return "same"
    return "improved" if delta_pp > 0 else "decreased"


def _join(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def narrate_row(row: ComparisonRow) -> str:
    groups: dict[str, list[str]] = {"improved": [], "decreased": [], "same": []}
    for m in METRICS:
        groups[classify(row.delta_pp(m))].append(METRIC_TITLES[m])
    parts = []
    if groups["improved"]:
        parts.append(f"improved {_join(groups['improved'])}")
    if groups["decreased"]:
        parts.append(f"decreased {_join(groups['decreased'])}")
    if groups["same"]:
        parts.append(f"stayed almost the same for {_join(groups['same'])}")
    return f"{technique_title(row.technique)} ({row.model}) versus {technique_title(row.baseline)}: " + "; ".join(parts) + "."


def narrate(table: ComparisonTable) -> str:
    """One sentence per non-baseline row."""
    return "".join(narrate_row(r) + "\n" for r in table.rows if r.technique != r.baseline)


def run_from_path(path: str | Path) -> TechniqueRun:
    """Load ``<technique>_<model>.report.json``."""
    path = Path(path)
    name = path.name
    if not name.endswith(".report.json") or "_" not in name:
        raise MalformedLine("report file name must be <technique>_<model>.report.json", source=str(path))
    stem = name[: -len(".report.json")]
    technique, model = stem.rsplit("_", 1)
    return TechniqueRun(technique, model, report_from_json(path.read_text(encoding="utf-8")))
