"""Command-line pipeline: synth, augment, split, train, eval, predict, report.

Configuration comes from an optional JSON file (``--config``) whose values
individual flags override. Every command resolves its output directory from
``--out-dir``, then the config file, then ``$GRAPEDET_OUT/<command>``.
Outputs are byte-identical across reruns with the same config and seed;
wall-clock information lives only in ``run_meta.json``.

Exit codes: 0 success, 1 usage or configuration error (the message names the
offending key), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from . import __version__
from .data import (
    DataError,
    DatasetManifest,
    ImageRecord,
    augment_plan,
    load_image,
    load_manifest,
    render_augment,
    save_image,
    save_manifest,
    split as split_dataset,
    synth_vineyard,
)
from .evaluate import (
    EvalError,
    benchmark,
    predicted_counts,
    stratified_report,
    write_count_csv,
    write_report_csv,
    write_report_json,
)
from .geometry import BBox, nms
from .model import ModelConfig, ModelError, SwinConfig, build_detector, decode, load_checkpoint
from .train import TrainConfig, TrainError, fit

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = "1"
OUT_ENV = "GRAPEDET_OUT"
SPLIT_CHOICES = ("train", "val", "test", "all")


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 1."""


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class EvalOptions:
    """Evaluation knobs the underlying metrics leave open."""

    iou_threshold: float = 0.5
    nms_iou: float = 0.45
    conf_threshold: float = 0.1
    operating_threshold: float | None = None
    r2_definition: str = "ols_fit"
    split: str = "val"
    annotate: bool = False

    def __post_init__(self) -> None:
        for key in ("iou_threshold", "nms_iou", "conf_threshold"):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise CliError(f"{key}: must lie in [0, 1], got {value}")
        if self.operating_threshold is not None and not 0.0 <= self.operating_threshold <= 1.0:
            raise CliError(
                f"operating_threshold: must lie in [0, 1], got {self.operating_threshold}"
            )
        if self.r2_definition not in ("ols_fit", "identity"):
            raise CliError(f"r2_definition: unknown value {self.r2_definition!r}")
        if self.split not in SPLIT_CHOICES:
            raise CliError(f"split: unknown value {self.split!r}")


@dataclass
class RunConfig:
    """Fully-resolved settings for one command invocation."""

    seed: int = 0
    out_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_options: EvalOptions = field(default_factory=EvalOptions)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "seed": self.seed,
            "out_dir": None if self.out_dir is None else str(self.out_dir),
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "eval": asdict(self.eval_options),
        }


def _section(payload: dict, name: str, cls):
    raw = payload.get(name, {})
    if not isinstance(raw, dict):
        raise CliError(f"config {name}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise CliError(f"config {name}: unknown key {unknown[0]!r}")
    try:
        return cls(**raw)
    except (TrainError, CliError) as exc:
        raise CliError(f"config {name}: {exc}") from exc


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config: no such file: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config: {path}: malformed JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CliError("config: top level must be a JSON object")
    if "schema_version" not in payload:
        raise CliError("config: missing required key 'schema_version'")
    if payload["schema_version"] != CONFIG_SCHEMA_VERSION:
        raise CliError(
            f"schema_version: unsupported value {payload['schema_version']!r},"
            f" expected {CONFIG_SCHEMA_VERSION!r}"
        )
    known = {"schema_version", "seed", "out_dir", "model", "train", "eval"}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise CliError(f"config: unknown key {unknown[0]!r}")

    seed = payload.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise CliError(f"seed: must be an integer, got {seed!r}")
    out_dir = payload.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise CliError(f"out_dir: must be a string, got {out_dir!r}")

    try:
        model = ModelConfig.from_dict(payload.get("model", {}))
    except (ModelError, TypeError, ValueError) as exc:
        raise CliError(f"config model: {exc}") from exc
    train = _section(payload, "train", TrainConfig)
    eval_options = _section(payload, "eval", EvalOptions)
    return RunConfig(
        seed=seed, out_dir=out_dir, model=model, train=train, eval_options=eval_options
    )


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = args.out_dir

    eval_updates = {}
    if getattr(args, "iou_thresh", None) is not None:
        eval_updates["iou_threshold"] = args.iou_thresh
    if getattr(args, "conf_thresh", None) is not None:
        eval_updates["conf_threshold"] = args.conf_thresh
    if getattr(args, "split", None) is not None:
        eval_updates["split"] = args.split
    if getattr(args, "annotate", False):
        eval_updates["annotate"] = True
    if eval_updates:
        cfg.eval_options = replace(cfg.eval_options, **eval_updates)

    try:
        if getattr(args, "swin", None) == "on" and cfg.model.swin is None:
            cfg.model = replace(cfg.model, swin=SwinConfig())
        elif getattr(args, "swin", None) == "off":
            cfg.model = replace(cfg.model, swin=None)
        if getattr(args, "swin_stages", None) is not None:
            cfg.model = replace(cfg.model, swin_stages=args.swin_stages)
    except ModelError as exc:
        raise CliError(f"config model: {exc}") from exc

    device = getattr(args, "device", None)
    if device is not None and device != "cpu":
        if not (device.startswith("cuda") and torch.cuda.is_available()):
            raise CliError(f"device: {device!r} not available on this host")
    return cfg


def _resolve_out_dir(args: argparse.Namespace, cfg: RunConfig, fallback: Path | None = None) -> Path:
    if cfg.out_dir is not None:
        return Path(cfg.out_dir)
    root = os.environ.get(OUT_ENV)
    if root:
        return Path(root) / args.command
    if fallback is not None:
        return fallback
    raise CliError(
        f"out_dir: not set (use --out-dir, the config file, or ${OUT_ENV})"
    )


def _require_exists(path: Path, key: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"{key}: no such path: {path}")
    return path


def _write_run_meta(out_dir: Path, command: str, started: float, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "duration_s": round(time.time() - started, 3),
        "package_version": __version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
    }
    if extra:
        meta.update(extra)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Shared inference plumbing


def _prepare_image(path: Path, input_size: int) -> torch.Tensor:
    with Image.open(path) as img:
        resized = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    return torch.from_numpy(np.array(resized)).permute(2, 0, 1).float() / 255.0


def _scale_box(b: BBox, sx: float, sy: float, width: float, height: float) -> BBox:
    return BBox(
        min(max(b.x1 * sx, 0.0), width),
        min(max(b.y1 * sy, 0.0), height),
        min(max(b.x2 * sx, 0.0), width),
        min(max(b.y2 * sy, 0.0), height),
        class_id=b.class_id,
        confidence=b.confidence,
    )


def _detect_records(
    model,
    manifest: DatasetManifest,
    records: list[ImageRecord],
    options: EvalOptions,
    device: str = "cpu",
    batch_size: int = 8,
) -> dict[str, list[BBox]]:
    """Run the detector over records; boxes come back in each record's own pixel space."""
    dev = torch.device(device)
    model.to(dev)
    model.eval()
    input_size = model.cfg.input_size
    detections: dict[str, list[BBox]] = {}
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = torch.stack(
                [_prepare_image(manifest.resolve(r.image_path), input_size) for r in chunk]
            ).to(dev)
            decoded = decode(model(x), model.cfg, conf_threshold=options.conf_threshold)
            for rec, boxes in zip(chunk, decoded):
                kept = nms(boxes, options.nms_iou)
                sx, sy = rec.width / input_size, rec.height / input_size
                detections[rec.image_path] = [
                    _scale_box(b, sx, sy, rec.width, rec.height) for b in kept
                ]
    return detections


def _records_for_split(manifest: DatasetManifest, which: str, source: Path) -> list[ImageRecord]:
    if which == "all":
        return list(manifest.records)
    records = [r for r in manifest.records if r.split == which]
    if not records:
        raise CliError(f"split: no records assigned to {which!r} in {source}")
    return records


def _copy_images(manifest: DatasetManifest, records: list[ImageRecord], dst_root: Path) -> None:
    for rec in records:
        src = manifest.resolve(rec.image_path)
        dst = Path(dst_root) / rec.image_path
        if src.resolve() == dst.resolve():
            continue
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    if args.n < 1:
        raise CliError(f"n: must be >= 1, got {args.n}")
    out_dir = _resolve_out_dir(args, cfg)
    manifest = synth_vineyard(args.n, seed=cfg.seed, out_dir=out_dir)
    _write_run_meta(out_dir, "synth", started, {"n_images": len(manifest.records)})
    print(f"synth: wrote {len(manifest.records)} images to {out_dir}")
    return 0


def cmd_augment(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    if args.n < 0:
        raise CliError(f"n: must be >= 0, got {args.n}")
    manifest_path = _require_exists(Path(args.data_dir) / "manifest.jsonl", "data_dir")
    manifest = load_manifest(manifest_path)
    out_dir = _resolve_out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    records_out: list[ImageRecord] = []
    n_variants = 0
    for i, rec in enumerate(manifest.records):
        records_out.append(rec)
        if not rec.is_raw:
            continue
        rec_seed = int(np.random.SeedSequence(entropy=[cfg.seed, i]).generate_state(1)[0])
        plan = augment_plan(rec, n=args.n, seed=rec_seed)
        if not plan:
            continue
        image = load_image(manifest.resolve(rec.image_path))
        for variant in plan:
            rendered = render_augment(image, variant)
            save_image(rendered, out_dir / variant.image_path)
            records_out.append(variant)
            n_variants += 1
    _copy_images(manifest, manifest.records, out_dir)
    augmented = DatasetManifest(records=records_out, counts=manifest.counts)
    save_manifest(augmented, out_dir)
    _write_run_meta(
        out_dir, "augment", started,
        {"n_raw": len(manifest.records), "n_variants": n_variants},
    )
    print(
        f"augment: {len(manifest.records)} records in, {n_variants} variants added,"
        f" {len(records_out)} total at {out_dir}"
    )
    return 0


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    manifest_path = _require_exists(Path(args.data_dir) / "manifest.jsonl", "data_dir")
    manifest = load_manifest(manifest_path)
    ratios = tuple(args.ratios)
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise CliError(f"ratios: must be nonnegative and sum to 1, got {list(ratios)}")
    result = split_dataset(manifest, ratios=ratios, seed=cfg.seed)
    out_dir = _resolve_out_dir(args, cfg, fallback=Path(args.data_dir))
    _copy_images(manifest, manifest.records, out_dir)
    save_manifest(result, out_dir)
    sizes = {
        name: sum(1 for r in result.records if r.split == name)
        for name in ("train", "val", "test")
    }
    _write_run_meta(out_dir, "split", started, {"sizes": sizes, "ratios": list(ratios)})
    print(
        f"split: train {sizes['train']} / val {sizes['val']} / test {sizes['test']}"
        f" at {out_dir}"
    )
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    manifest_path = _require_exists(Path(args.data_dir) / "manifest.jsonl", "data_dir")
    manifest = load_manifest(manifest_path)
    train_records = _records_for_split(manifest, "train", manifest_path)
    val_records = _records_for_split(manifest, "val", manifest_path)
    train_m = DatasetManifest(records=train_records, counts=manifest.counts, root=manifest.root)
    val_m = DatasetManifest(records=val_records, counts=manifest.counts, root=manifest.root)
    out_dir = _resolve_out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.train.seed)
    model = build_detector(cfg.model)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    result = fit(model, train_m, val_m, cfg.train, out_dir=out_dir, device=args.device)
    _write_run_meta(
        out_dir, "train", started,
        {
            "epochs_run": len(result.history),
            "best_epoch": result.best_epoch,
            "best_val_map50": result.best_val_map50,
            "diverged": result.diverged,
        },
    )
    if result.diverged:
        print(
            f"error: training diverged after epoch {len(result.history)};"
            f" last good checkpoint kept at {out_dir}",
            file=sys.stderr,
        )
        return 2
    print(
        f"train: {len(result.history)} epochs, best val mAP@0.5"
        f" {result.best_val_map50:.4f} at epoch {result.best_epoch}, artifacts in {out_dir}"
    )
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    manifest_path = _require_exists(Path(args.data_dir) / "manifest.jsonl", "data_dir")
    checkpoint = _require_exists(args.checkpoint, "checkpoint")
    manifest = load_manifest(manifest_path)
    options = cfg.eval_options
    records = _records_for_split(manifest, options.split, manifest_path)
    model, _ = load_checkpoint(checkpoint)
    out_dir = _resolve_out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    detections = _detect_records(model, manifest, records, options, device=args.device)
    subset = DatasetManifest(records=records, counts=manifest.counts, root=manifest.root)
    report = stratified_report(
        subset,
        detections,
        counts=manifest.counts,
        iou_threshold=options.iou_threshold,
        operating_threshold=options.operating_threshold,
        r2_definition=options.r2_definition,
    )
    write_report_json(report, out_dir / "report.json", config_echo=cfg.to_dict())
    write_report_csv(report, out_dir / "report.csv")
    predicted = predicted_counts(
        records, detections, report.metadata["operating_threshold"]
    )
    write_count_csv(manifest.counts, predicted, out_dir / "counts.csv")

    # latency is inherently run-dependent, so it lives with the timestamps
    bench_images = torch.stack(
        [
            _prepare_image(manifest.resolve(r.image_path), model.cfg.input_size)
            for r in records[:2]
        ]
    )
    bench = benchmark(model, bench_images, repetitions=3)
    _write_run_meta(out_dir, "eval", started, {"benchmark": bench})
    print(
        f"eval: map50 {report.ap50:.4f} f1 {report.f1:.4f} precision {report.precision:.4f}"
        f" recall {report.recall:.4f} on {report.n_images} images ({options.split})"
    )
    return 0


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    manifest_path = _require_exists(Path(args.data_dir) / "manifest.jsonl", "data_dir")
    checkpoint = _require_exists(args.checkpoint, "checkpoint")
    manifest = load_manifest(manifest_path)
    options = cfg.eval_options
    records = (
        list(manifest.records)
        if args.split is None
        else _records_for_split(manifest, args.split, manifest_path)
    )
    model, _ = load_checkpoint(checkpoint)
    out_dir = _resolve_out_dir(args, cfg)
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)

    detections = _detect_records(model, manifest, records, options, device=args.device)
    for rec in records:
        lines = []
        for b in detections[rec.image_path]:
            cx = (b.x1 + b.x2) / 2 / rec.width
            cy = (b.y1 + b.y2) / 2 / rec.height
            w = (b.x2 - b.x1) / rec.width
            h = (b.y2 - b.y1) / rec.height
            lines.append(
                f"{b.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f} {b.confidence:.6f}"
            )
        stem = Path(rec.image_path).stem
        (pred_dir / f"{stem}.txt").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
    if options.annotate:
        ann_dir = out_dir / "annotated"
        ann_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            with Image.open(manifest.resolve(rec.image_path)) as img:
                canvas = img.convert("RGB")
                draw = ImageDraw.Draw(canvas)
                for b in detections[rec.image_path]:
                    draw.rectangle((b.x1, b.y1, b.x2, b.y2), outline=(255, 32, 32), width=2)
                    draw.text((b.x1 + 2, max(b.y1 - 11, 0)), f"{b.confidence:.2f}", fill=(255, 32, 32))
                canvas.save(ann_dir / f"{Path(rec.image_path).stem}.png")
    n_boxes = sum(len(v) for v in detections.values())
    _write_run_meta(
        out_dir, "predict", started, {"n_images": len(records), "n_detections": n_boxes}
    )
    print(f"predict: {n_boxes} detections over {len(records)} images at {out_dir}")
    return 0


def _render_strata_table(payload: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    columns = ("stratum", "precision", "recall", "ap50", "f1", "n_images")
    rows = [
        (
            "all",
            f"{payload['precision']:.4f}",
            f"{payload['recall']:.4f}",
            f"{payload['ap50']:.4f}",
            f"{payload['f1']:.4f}",
            str(payload["n_images"]),
        )
    ]
    for key in sorted(payload.get("strata", {})):
        value = payload["strata"][key]
        if value is None:
            continue
        rows.append(
            (
                key,
                f"{value['precision']:.4f}",
                f"{value['recall']:.4f}",
                f"{value['ap50']:.4f}",
                f"{value['f1']:.4f}",
                str(value["n_images"]),
            )
        )
    fig, ax = plt.subplots(figsize=(8.5, 0.35 * (len(rows) + 2) + 0.6))
    ax.axis("off")
    table = ax.table(cellText=rows, colLabels=columns, loc="center", cellLoc="left")
    table.auto_set_font_size(False)
    table.set_fontsize(9)
    table.auto_set_column_width(col=list(range(len(columns))))
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def _render_scatter(pairs: list[tuple[int, int]], x_label: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    truth = [p[0] for p in pairs]
    pred = [p[1] for p in pairs]
    lim = max(truth + pred + [1]) + 1
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, lim], [0, lim], linestyle="--", linewidth=1, color="0.6")
    ax.scatter(truth, pred, s=28, alpha=0.85)
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel(x_label)
    ax.set_ylabel("predicted count")
    ax.set_title(f"predicted vs {x_label}")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    started = time.time()
    run_dir = _require_exists(args.run_dir, "run_dir")
    report_path = _require_exists(Path(run_dir) / "report.json", "run_dir")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    out_dir = _resolve_out_dir(args, cfg, fallback=Path(run_dir))
    out_dir.mkdir(parents=True, exist_ok=True)

    artifacts = []
    _render_strata_table(payload, out_dir / "strata_table.png")
    artifacts.append("strata_table.png")

    counts_path = Path(run_dir) / "counts.csv"
    if counts_path.exists():
        with counts_path.open(encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        if rows:
            field_pairs = [(int(r["field_count"]), int(r["predicted"])) for r in rows]
            label_pairs = [(int(r["label_count"]), int(r["predicted"])) for r in rows]
            _render_scatter(field_pairs, "field count", out_dir / "scatter_field.png")
            _render_scatter(label_pairs, "label count", out_dir / "scatter_label.png")
            artifacts += ["scatter_field.png", "scatter_label.png"]
    else:
        logger.warning("no counts.csv in %s; scatter plots skipped", run_dir)

    for name in ("report.json", "report.csv", "counts.csv"):
        src = Path(run_dir) / name
        dst = out_dir / name
        if src.exists() and src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
            artifacts.append(name)
    _write_run_meta(out_dir, "report", started, {"artifacts": sorted(set(artifacts))})
    print(f"report: wrote {', '.join(sorted(set(artifacts)))} to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are exit 1
        raise CliError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="seed overriding the config file")
    p.add_argument("--out-dir", type=Path, dest="out_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grapedet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic vineyard dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=16, help="number of images")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="plan and render augmented variants")
    _add_common(p)
    p.add_argument("data_dir", type=Path)
    p.add_argument("--n", type=int, default=9, help="variants per raw image")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="assign train/val/test by source")
    _add_common(p)
    p.add_argument("data_dir", type=Path)
    p.add_argument(
        "--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1),
        metavar=("TRAIN", "VAL", "TEST"),
    )
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a detector")
    _add_common(p)
    p.add_argument("data_dir", type=Path)
    p.add_argument("--swin", choices=("on", "off"), help="toggle the attention backbone stage")
    p.add_argument("--swin-stages", type=int, dest="swin_stages", help="backbone stages replaced, from the deep end")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with stratified metrics")
    _add_common(p)
    p.add_argument("data_dir", type=Path)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--iou-thresh", type=float, dest="iou_thresh", help="match IoU threshold")
    p.add_argument("--conf-thresh", type=float, dest="conf_thresh", help="decode confidence floor")
    p.add_argument("--split", choices=SPLIT_CHOICES, help="which split to evaluate")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write label-format detections")
    _add_common(p)
    p.add_argument("data_dir", type=Path)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--conf-thresh", type=float, dest="conf_thresh", help="decode confidence floor")
    p.add_argument("--split", choices=SPLIT_CHOICES, help="restrict to one split (default: all)")
    p.add_argument("--annotate", action="store_true", help="also write annotated images")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render tables and scatter plots from an eval run")
    _add_common(p)
    p.add_argument("run_dir", type=Path)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise CliError("missing command (synth, augment, split, train, eval, predict, report)")
        cfg = _resolve_run_config(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ModelError, TrainError, EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive: unexpected runtime failure
        logger.exception("unhandled failure")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
