"""``crackbench`` command line: crop, blackout, merge, split, stats, eval, compare, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .annotations import (
    IMAGE_SUFFIXES,
    AnnotatedImage,
    ClassMap,
    parse_detections,
    parse_voc,
    relabel,
    serialize_detections,
    serialize_voc,
    serialize_yolo_labels,
)
from .config import ENV_CONFIG, PipelineConfig, load_config
from .datasetops import (
    DatasetManifest,
    ManifestRecord,
    build_manifest,
    class_histogram,
    load_annotation,
    read_manifest,
    split_counts,
    split_dataset,
    write_manifest,
)
from .errors import ConfigInvalid, CrackbenchError, UnreadableFile
from .imageops import CropSpec, HsvRange, crop_bottom, hsv_blackout, load_image, remap_boxes_after_crop, save_image
from .metrics import curves_to_csv, evaluate, report_to_csv, report_to_json
from .report import compare_runs, narrate, render, run_from_path
from .synthgen import CorruptionSpec, SceneSpec, corrupt_predictions, generate_scene

log = logging.getLogger("crackbench")


class UsageError(CrackbenchError):
    category = "config"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 instead of argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers


@contextlib.contextmanager
def staged_output(out_dir: Path, inputs: Iterable[Path] = ()):
    """Yield a scratch directory that becomes ``out_dir`` only on success."""
    out_dir = Path(out_dir).absolute()
    for p in inputs:
        p = Path(p).absolute()
        if p == out_dir or out_dir in p.parents or p in out_dir.parents:
            raise UsageError(f"output directory {out_dir} overlaps input {p}")
    if out_dir.exists() and (not out_dir.is_dir() or any(out_dir.iterdir())):
        raise UsageError(f"output directory {out_dir} exists and is not empty")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.partial-", dir=out_dir.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out_dir.exists():
        out_dir.rmdir()
    tmp.rename(out_dir)
    os.chmod(out_dir, 0o755)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _classes(cfg: PipelineConfig, args) -> ClassMap:
    if getattr(args, "classes", None):
        return ClassMap.from_file(args.classes)
    return cfg.classes


def _manifest_from_args(args, cfg: PipelineConfig, classes: ClassMap) -> DatasetManifest:
    if getattr(args, "manifest", None):
        return read_manifest(args.manifest, classes)
    if not (args.images and args.annotations):
        raise UsageError("give --manifest or both --images and --annotations")
    return build_manifest(
        args.images, args.annotations, classes,
        orphans="error" if args.strict else "warn",
        skip_unknown=cfg.skip_unknown or args.skip_unknown,
        workers=cfg.workers,
    )


def _write_annotation(img: AnnotatedImage, src: Path, dest_dir: Path, classes: ClassMap, suffix: str) -> None:
    if src.suffix.lower() == ".xml":
        _write(dest_dir / f"{img.image_id}.xml", serialize_voc(img, classes, image_suffix=suffix))
    else:
        _write(dest_dir / f"{img.image_id}.txt", serialize_yolo_labels(img.boxes, img.width, img.height))


# ------------------------------------------------------------- subcommands


def _crop_one(job):
    rec, classes, spec, min_visible, out = job
    img = load_image(rec.image_path)
    cropped = crop_bottom(img, spec)
    ann, dropped = remap_boxes_after_crop(load_annotation(rec, classes), spec, min_visible)
    save_image(cropped, out / "images" / Path(rec.image_path).name)
    _write_annotation(ann, Path(rec.annotation_path), out / "annotations", classes, Path(rec.image_path).suffix)
    return rec.image_id, len(ann.boxes), dropped


def cmd_crop(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(crop_width=args.width, crop_height=args.height, min_visible_fraction=args.min_visible_fraction)
    classes = _classes(cfg, args)
    manifest = _manifest_from_args(args, cfg, classes)
    spec = CropSpec(cfg.crop_width, cfg.crop_height)
    with staged_output(args.out, [args.images, args.annotations]) as out:
        (out / "images").mkdir()
        (out / "annotations").mkdir()
        jobs = [(rec, classes, spec, cfg.min_visible_fraction, out) for rec in manifest.records]
        results = _map(_crop_one, jobs, cfg.workers)
        lines = ["image_id,kept,dropped"] + [f"{i},{k},{d}" for i, k, d in results]
        _write(out / "crop_report.csv", "\n".join(lines) + "\n")
    dropped = sum(d for _, _, d in results)
    print(f"cropped {len(results)} image(s) to {spec.target_width}x{spec.target_height}; dropped {dropped} box(es)")
    return 0


def _blackout_one(job):
    path, hsv_range, keep_inside, out = job
    save_image(hsv_blackout(load_image(path), hsv_range, keep_inside), out / "images" / path.name)
    return path.name


def cmd_blackout(args, cfg: PipelineConfig) -> int:
    keep = None if args.keep is None else args.keep == "inside"
    cfg = cfg.override(hsv_lower=args.lower and tuple(args.lower), hsv_upper=args.upper and tuple(args.upper), keep_inside=keep)
    hsv_range = HsvRange(cfg.hsv_lower, cfg.hsv_upper)
    images = sorted(p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    inputs = [args.images] + ([args.annotations] if args.annotations else [])
    with staged_output(args.out, inputs) as out:
        (out / "images").mkdir()
        _map(_blackout_one, [(p, hsv_range, cfg.keep_inside, out) for p in images], cfg.workers)
        if args.annotations:
            shutil.copytree(args.annotations, out / "annotations")
    side = "inside" if cfg.keep_inside else "outside"
    print(f"blacked out {len(images)} image(s), keeping pixels {side} {hsv_range.lower}..{hsv_range.upper}")
    return 0


def cmd_merge(args, cfg: PipelineConfig) -> int:
    classes = _classes(cfg, args)
    if not cfg.merge:
        raise ConfigInvalid("no [merge] rules configured", source=cfg.source)
    rule = cfg.merge_rule(classes)
    files = sorted(p for p in Path(args.annotations).iterdir() if p.suffix.lower() in (".xml", ".txt"))
    before = [0] * len(classes)
    after = [0] * len(rule.classes)
    with staged_output(args.out, [args.annotations]) as out:
        (out / "annotations").mkdir()
        for path in files:
            text = path.read_text(encoding="utf-8")
            if path.suffix.lower() == ".xml":
                try:
                    img = parse_voc(text, classes, image_id=path.stem, skip_unknown=cfg.skip_unknown)
                except CrackbenchError as exc:
                    raise exc.with_source(str(path)) from None
                merged = relabel(img, rule.mapping)
                suffix = Path(_voc_filename(text) or ".jpg").suffix or ".jpg"
                _write(out / "annotations" / path.name, serialize_voc(merged, rule.classes, image_suffix=suffix))
                ids = [b.class_id for b in img.boxes]
            else:
                ids, lines = [], []
                for lineno, line in enumerate(text.splitlines(), start=1):
                    fields = line.split()
                    if not fields:
                        continue
                    try:
                        cid = int(fields[0])
                        new = rule.mapping[cid]
                    except (ValueError, IndexError):
                        raise UnreadableFile(f"bad class id {fields[0]!r}", source=f"{path}:{lineno}") from None
                    ids.append(cid)
                    lines.append(" ".join([str(new), *fields[1:]]))
                _write(out / "annotations" / path.name, "".join(line + "\n" for line in lines))
            for cid in ids:
                before[cid] += 1
                after[rule.mapping[cid]] += 1
        _write(out / "classes.txt", rule.classes.to_text())
    print(f"merged {len(classes)} classes into {len(rule.classes)} over {len(files)} file(s); {sum(after)} box(es)")
    for i, label in rule.classes:
        print(f"  {label}: {after[i]}")
    return 0


def _voc_filename(text: str) -> str | None:
    try:
        return ET.fromstring(text).findtext("filename")
    except ET.ParseError:
        return None


def cmd_split(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(
        seed=args.seed, ratios=args.ratios and tuple(args.ratios),
        balance_test=True if args.balance_test else None,
    )
    classes = _classes(cfg, args)
    manifest = _manifest_from_args(args, cfg, classes)
    manifest = split_dataset(manifest, cfg.ratios, cfg.seed, balance_test=cfg.balance_test)
    with staged_output(args.out, [p for p in (args.images, args.annotations) if p]) as out:
        write_manifest(manifest, out / "manifest.csv")
    counts = split_counts(manifest)
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_stats(args, cfg: PipelineConfig) -> int:
    classes = _classes(cfg, args)
    manifest = _manifest_from_args(args, cfg, classes)
    if args.split:
        manifest = DatasetManifest(tuple(manifest.split(args.split)), manifest.classes)
    hist = class_histogram(manifest)
    chart = hist.bar_chart()
    with staged_output(args.out, [p for p in (args.images, args.annotations) if p]) as out:
        _write(out / "histogram.csv", hist.to_csv())
        _write(out / "histogram.txt", chart)
    print(chart, end="")
    print(f"total {hist.total} box(es) in {len(manifest)} image(s)")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(iou_threshold=args.iou, confidence_threshold=args.conf, ap_method=args.ap_method)
    classes = _classes(cfg, args)
    manifest = read_manifest(args.manifest, classes)
    try:
        dets = parse_detections(Path(args.detections).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UnreadableFile(exc.strerror or str(exc), source=str(args.detections)) from None
    except CrackbenchError as exc:
        raise exc.with_source(str(args.detections)) from None
    report = evaluate(dets, manifest, args.split, cfg.iou_threshold, cfg.confidence_threshold, ap_method=cfg.ap_method)
    name = args.name
    with staged_output(args.out, [args.manifest, args.detections]) as out:
        _write(out / f"{name}.report.json", report_to_json(report))
        _write(out / f"{name}.report.csv", report_to_csv(report))
        _write(out / f"{name}.curves.csv", curves_to_csv(report))
    agg = getattr(report, cfg.aggregation)
    print(
        f"mAP {report.map:.4f}  P {agg.precision:.4f}  R {agg.recall:.4f}  F1 {agg.f1:.4f} "
        f"({cfg.aggregation}; TP {report.tp} FP {report.fp} FN {report.fn})"
    )
    return 0


def cmd_compare(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(baseline=args.baseline, aggregation=args.aggregation)
    paths = [Path(p) for p in args.reports]
    files: list[Path] = []
    for p in paths:
        files += sorted(p.glob("*.report.json")) if p.is_dir() else [p]
    if not files:
        raise UsageError("no *.report.json inputs found")
    runs = [run_from_path(f) for f in files]
    table = compare_runs(runs, cfg.baseline, cfg.aggregation)
    markdown = render(table, "markdown")
    story = narrate(table)
    with staged_output(args.out, paths) as out:
        _write(out / "comparison.md", markdown)
        _write(out / "comparison.csv", render(table, "csv"))
        _write(out / "narration.txt", story)
    print(markdown, end="")
    print()
    print(story, end="")
    return 0


def _synth_one(job):
    spec, index, out, fmt, classes = job
    img, ann = generate_scene(spec, index)
    save_image(img, out / "images" / f"{ann.image_id}.png")
    if fmt in ("voc", "both"):
        _write(out / "annotations" / f"{ann.image_id}.xml", serialize_voc(ann, classes, image_suffix=".png"))
    if fmt in ("yolo", "both"):
        _write(out / "labels" / f"{ann.image_id}.txt", serialize_yolo_labels(ann.boxes, ann.width, ann.height))
    return ann


def cmd_synth(args, cfg: PipelineConfig) -> int:
    classes = _classes(cfg, args)
    seed = cfg.seed if args.seed is None else args.seed
    spec = SceneSpec(
        width=args.width, height=args.height,
        horizon=args.horizon if args.horizon is not None else args.height * 2 // 5,
        crack_count=(args.min_cracks, args.max_cracks),
        brightness=args.brightness, n_classes=len(classes), seed=seed,
    )
    with staged_output(args.out) as out:
        for sub in ("images", "annotations", "labels"):
            (out / sub).mkdir()
        anns = _map(_synth_one, [(spec, i, out, args.format, classes) for i in range(args.count)], cfg.workers)
        manifest = DatasetManifest(
            tuple(
                ManifestRecord(
                    a.image_id, out / "images" / f"{a.image_id}.png",
                    out / ("annotations" if args.format != "yolo" else "labels") / f"{a.image_id}.{'xml' if args.format != 'yolo' else 'txt'}",
                    a.width, a.height, annotation=a,
                )
                for a in anns
            ),
            classes,
        )
        if args.split:
            manifest = split_dataset(manifest, cfg.ratios, seed)
        write_manifest(manifest, out / "manifest.csv")
        _write(out / "classes.txt", classes.to_text())
        if args.predictions:
            result = corrupt_predictions(
                anns,
                CorruptionSpec(args.drop, args.inject, args.jitter, n_classes=len(classes), seed=seed),
            )
            _write(out / "detections.txt", serialize_detections(result.detections))
            _write(
                out / "corruption.json",
                json.dumps({"tp": result.tp, "fp": result.fp, "fn": result.fn}, indent=2, sort_keys=True) + "\n",
            )
    total = sum(len(a.boxes) for a in anns)
    print(f"generated {len(anns)} scene(s) with {total} box(es) in {args.out}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crackbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"TOML config (default: ${ENV_CONFIG} or built-in defaults)")
    common.add_argument("--classes", help="class label file, one label per line (overrides config)")
    common.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_inputs(p, required=False):
        p.add_argument("--images", required=required)
        p.add_argument("--annotations", required=required)
        p.add_argument("--strict", action="store_true", help="orphan images are errors")
        p.add_argument("--skip-unknown", action="store_true", help="skip and count objects with unknown labels")

    p = sub.add_parser("crop", parents=[common], help="cut the top rows and remap boxes")
    dataset_inputs(p, required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--min-visible-fraction", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crop, manifest=None)

    p = sub.add_parser("blackout", parents=[common], help="zero pixels outside/inside an HSV range")
    p.add_argument("--images", required=True)
    p.add_argument("--annotations", help="copied through unchanged")
    p.add_argument("--lower", type=int, nargs=3, metavar=("H", "S", "V"))
    p.add_argument("--upper", type=int, nargs=3, metavar=("H", "S", "V"))
    p.add_argument("--keep", choices=("inside", "outside"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blackout)

    p = sub.add_parser("merge", parents=[common], help="rewrite labels through the configured merge rules")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("split", parents=[common], help="seeded train/val/test assignment")
    dataset_inputs(p)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--balance-test", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", parents=[common], help="per-class object counts")
    dataset_inputs(p)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test", "unassigned"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", parents=[common], help="score a detection file against a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "unassigned", "all"))
    p.add_argument("--iou", type=float)
    p.add_argument("--conf", type=float)
    p.add_argument("--ap-method", choices=("all", "101"))
    p.add_argument("--name", default="run", help="output stem, conventionally <technique>_<model>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="technique comparison table and narration")
    p.add_argument("reports", nargs="+", help="*.report.json files or directories holding them")
    p.add_argument("--baseline")
    p.add_argument("--aggregation", choices=("macro", "micro"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", parents=[common], help="synthetic pavement dataset with exact ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int, default=600)
    p.add_argument("--height", type=int, default=600)
    p.add_argument("--horizon", type=int)
    p.add_argument("--min-cracks", type=int, default=1)
    p.add_argument("--max-cracks", type=int, default=4)
    p.add_argument("--brightness", type=float, default=1.0)
    p.add_argument("--format", choices=("voc", "yolo", "both"), default="both")
    p.add_argument("--split", action="store_true", help="assign splits using the configured ratios")
    p.add_argument("--predictions", action="store_true", help="also write a corrupted detections file")
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("--inject", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config or os.environ.get(ENV_CONFIG) or None)
        cfg = cfg.override(workers=args.workers)
        if cfg.workers is None:
            cfg = cfg.override(workers=os.cpu_count() or 1)
        return args.func(args, cfg)
    except CrackbenchError as exc:
        print(f"crackbench: {exc.category} error: {exc}", file=sys.stderr)
        return 1 if exc.category == "config" else 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"crackbench: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
