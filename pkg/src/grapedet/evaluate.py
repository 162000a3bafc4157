"""Detection evaluation: greedy matching, average precision, F1, per-vine
count regression, condition-stratified reporting, and inference timing.

All functions are pure over immutable inputs; aggregation order is fixed by
image order so results are deterministic.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CountRecord, DatasetManifest, ImageRecord, STRATA_DIMENSIONS
from .geometry import BBox, iou, to_pixels

logger = logging.getLogger(__name__)

AP_INTERPOLATION = "all_point"


class EvalError(ValueError):
    """Raised for inconsistent evaluation inputs."""


@dataclass
class MatchResult:
    """Per-image matching outcome; flags follow descending-confidence order."""

    tp_flags: list[bool]
    confidences: list[float]
    fn_count: int
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(self.tp_flags)

    @property
    def fp(self) -> int:
        return len(self.tp_flags) - self.tp

    @property
    def gt_count(self) -> int:
        return self.tp + self.fn_count


def _det_order(b: BBox) -> tuple:
    return (-b.confidence, b.x1, b.y1)


def match(dets: list[BBox], gts: list[BBox], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching: descending-confidence detections each claim the
    unmatched ground truth of highest IoU at or above the threshold."""
    for d in dets:
        if d.confidence is None:
            raise EvalError(f"detection without confidence: {d}")
    ordered = sorted(dets, key=_det_order)
    taken = [False] * len(gts)
    flags: list[bool] = []
    for d in ordered:
        best_iou, best_idx = 0.0, -1
        for gi, g in enumerate(gts):
            if taken[gi]:
                continue
            value = iou(d, g)
            if value >= iou_threshold and value > best_iou:
                best_iou, best_idx = value, gi
        if best_idx >= 0:
            taken[best_idx] = True
            flags.append(True)
        else:
            flags.append(False)
    return MatchResult(
        tp_flags=flags,
        confidences=[d.confidence for d in ordered],
        fn_count=taken.count(False),
        iou_threshold=iou_threshold,
    )


def average_precision(matches: list[MatchResult] | MatchResult) -> float:
    """All-point interpolated AP over the pooled, globally ranked detections.

    AP = sum over recall steps of (R_i - R_{i-1}) * max precision at recall
    >= R_i. Zero ground truths yields 0 with a warning.
    """
    if isinstance(matches, MatchResult):
        matches = [matches]
    n_gt = sum(m.gt_count for m in matches)
    if n_gt == 0:
        logger.warning("average_precision over zero ground truths, reporting 0")
        return 0.0
    pooled = []
    for img_idx, m in enumerate(matches):
        for det_idx, (conf, flag) in enumerate(zip(m.confidences, m.tp_flags)):
            pooled.append((-conf, img_idx, det_idx, flag))
    pooled.sort()
    if not pooled:
        return 0.0
    tp = np.cumsum([p[3] for p in pooled])
    fp = np.cumsum([not p[3] for p in pooled])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope from the right, integrated over recall steps
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise EvalError(f"precision/recall outside [0, 1]: {precision}, {recall}")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def count_metrics(
    pred_counts, true_counts, r2_definition: str = "ols_fit"
) -> dict:
    """Count-regression agreement: RMSE of raw errors plus R².

    ``ols_fit`` (scatter-plot convention) takes R² of the least-squares fit
    of predicted on true, so constant offsets do not lower it; ``identity``
    scores against the y=x line instead. Zero variance in the truth leaves
    R² undefined, reported as None.
    """
    pred = np.asarray(pred_counts, dtype=float)
    true = np.asarray(true_counts, dtype=float)
    if pred.shape != true.shape or pred.ndim != 1:
        raise EvalError(f"count vectors must be equal-length 1-D, got {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise EvalError("count vectors must be non-empty")
    if r2_definition not in ("ols_fit", "identity"):
        raise EvalError(f"unknown r2_definition {r2_definition!r}")
    rmse = float(np.sqrt(np.mean((pred - true) ** 2)))
    ss_true = float(np.sum((true - true.mean()) ** 2))
    if ss_true == 0.0:
        return {"r2": None, "rmse": rmse}
    if r2_definition == "identity":
        r2 = 1.0 - float(np.sum((pred - true) ** 2)) / ss_true
        return {"r2": r2, "rmse": rmse}
    ss_pred = float(np.sum((pred - pred.mean()) ** 2))
    if ss_pred == 0.0:
        return {"r2": 0.0, "rmse": rmse}
    cov = float(np.sum((pred - pred.mean()) * (true - true.mean())))
    return {"r2": cov * cov / (ss_pred * ss_true), "rmse": rmse}


# ---------------------------------------------------------------------------
# Stratified reporting


@dataclass
class MetricReport:
    precision: float
    recall: float
    ap50: float
    map: float
    f1: float
    n_images: int
    strata: dict = field(default_factory=dict)
    count_regression: dict = field(default_factory=dict)
    latency_ms_per_image: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "ap50": self.ap50,
            "map": self.map,
            "f1": self.f1,
            "n_images": self.n_images,
            "strata": self.strata,
            "count_regression": self.count_regression,
            "latency_ms_per_image": self.latency_ms_per_image,
            "metadata": self.metadata,
        }


def _rates_at_threshold(matches: list[MatchResult], threshold: float) -> tuple[float, float]:
    """Precision/recall once detections under the threshold are dropped.

    Valid without rematching: greedy matching processes detections in
    descending confidence, so removing low ones never changes higher claims.
    """
    tp = fp = 0
    n_gt = sum(m.gt_count for m in matches)
    for m in matches:
        for conf, flag in zip(m.confidences, m.tp_flags):
            if conf >= threshold:
                tp += flag
                fp += not flag
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


def pick_operating_threshold(matches: list[MatchResult]) -> float:
    """Confidence threshold maximizing F1 over the given matches; ties go to
    the higher threshold."""
    candidates = sorted({c for m in matches for c in m.confidences}, reverse=True)
    best_t, best_f1 = 1.0, -1.0
    for t in candidates:
        p, r = _rates_at_threshold(matches, t)
        score = f1(p, r)
        if score > best_f1:
            best_t, best_f1 = t, score
    return best_t


def _summarize(matches: list[MatchResult], threshold: float, n_images: int) -> dict:
    precision, recall = _rates_at_threshold(matches, threshold)
    return {
        "precision": precision,
        "recall": recall,
        "ap50": average_precision(matches) if matches else 0.0,
        "f1": f1(precision, recall),
        "n_images": n_images,
    }


def _detections_in_roi(dets: list[BBox], rec: ImageRecord, threshold: float) -> int:
    roi = rec.canopy_roi
    count = 0
    for d in dets:
        if d.confidence < threshold:
            continue
        cx, cy = d.center
        if roi is None or (roi.x1 <= cx <= roi.x2 and roi.y1 <= cy <= roi.y2):
            count += 1
    return count


def predicted_counts(
    records: list[ImageRecord], detections: dict[str, list[BBox]], threshold: float
) -> dict[str, int]:
    """Per-vine bunch counts: detections at or above the operating threshold
    whose centers fall inside the record's canopy region, summed over each
    vine's raw images."""
    out: dict[str, int] = {}
    for rec in records:
        if not rec.is_raw or rec.image_path not in detections:
            continue
        out[rec.vine_id] = out.get(rec.vine_id, 0) + _detections_in_roi(
            detections[rec.image_path], rec, threshold
        )
    return out


def stratified_report(
    manifest: DatasetManifest,
    detections: dict[str, list[BBox]],
    counts: list[CountRecord] | None = None,
    iou_threshold: float = 0.5,
    operating_threshold: float | None = None,
    r2_definition: str = "ols_fit",
) -> MetricReport:
    """Global metrics plus one sub-report per variety x condition value.

    ``detections`` maps image_path to post-suppression boxes in the record's
    own pixel space. An empty stratum is reported as missing (null), never as
    zero. Count regression runs per variety against both the field count and
    the annotation count, predicting each vine's count as its detections
    above the operating threshold whose centers fall in the canopy region.
    """
    records = [r for r in manifest.records if r.image_path in detections]
    unknown = set(detections) - {r.image_path for r in manifest.records}
    if unknown:
        raise EvalError(f"detections reference unknown images, e.g. {sorted(unknown)[:3]}")
    if not records:
        raise EvalError("no evaluated images found in manifest")

    per_image: dict[str, MatchResult] = {}
    for rec in records:
        gts = [to_pixels(b, rec.width, rec.height) for b in rec.boxes]
        per_image[rec.image_path] = match(
            detections[rec.image_path], gts, iou_threshold=iou_threshold
        )
    all_matches = [per_image[r.image_path] for r in records]
    threshold = (
        pick_operating_threshold(all_matches)
        if operating_threshold is None
        else operating_threshold
    )

    summary = _summarize(all_matches, threshold, len(records))
    strata: dict[str, dict | None] = {}
    for variety in sorted({r.variety for r in records}):
        for dim in STRATA_DIMENSIONS:
            if dim == "variety":
                continue
            values = sorted(
                {getattr(r, dim) for r in records if getattr(r, dim) is not None}
            )
            for value in values:
                key = f"{variety}/{dim}={value}"
                group = [
                    r for r in records if r.variety == variety and getattr(r, dim) == value
                ]
                if not group:
                    strata[key] = None
                    continue
                strata[key] = _summarize(
                    [per_image[r.image_path] for r in group], threshold, len(group)
                )

    count_regression: dict[str, dict] = {}
    if counts:
        by_vine = predicted_counts(records, detections, threshold)
        variety_of: dict[str, str] = {
            rec.vine_id: rec.variety for rec in records if rec.is_raw
        }
        for variety in sorted(set(variety_of.values())):
            rows = [
                c for c in counts if c.vine_id in by_vine and variety_of[c.vine_id] == variety
            ]
            if not rows:
                continue
            pred = [by_vine[c.vine_id] for c in rows]
            count_regression[variety] = {
                "vs_field_count": count_metrics(
                    pred, [c.field_count for c in rows], r2_definition
                ),
                "vs_label_count": count_metrics(
                    pred, [c.label_count for c in rows], r2_definition
                ),
                "n_vines": len(rows),
            }

    return MetricReport(
        precision=summary["precision"],
        recall=summary["recall"],
        ap50=summary["ap50"],
        map=summary["ap50"],  # single class: mAP@0.5 equals AP@0.5
        f1=summary["f1"],
        n_images=len(records),
        strata=strata,
        count_regression=count_regression,
        metadata={
            "iou_threshold": iou_threshold,
            "operating_threshold": threshold,
            "operating_rule": "given" if operating_threshold is not None else "max_f1",
            "r2_definition": r2_definition,
            "ap_interpolation": AP_INTERPOLATION,
        },
    )


# ---------------------------------------------------------------------------
# Export and timing


def write_report_json(report: MetricReport, path: Path, config_echo: dict | None = None) -> None:
    payload = report.to_dict()
    if config_echo is not None:
        payload["config"] = config_echo
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report_csv(report: MetricReport, path: Path) -> None:
    """Flat stratum table; the global row is labeled ``all``. Missing strata
    are omitted rather than zero-filled."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stratum", "precision", "recall", "ap50", "f1", "n_images"])
        writer.writerow(
            ["all", f"{report.precision:.6f}", f"{report.recall:.6f}",
             f"{report.ap50:.6f}", f"{report.f1:.6f}", report.n_images]
        )
        for key in sorted(report.strata):
            sub = report.strata[key]
            if sub is None:
                continue
            writer.writerow(
                [key, f"{sub['precision']:.6f}", f"{sub['recall']:.6f}",
                 f"{sub['ap50']:.6f}", f"{sub['f1']:.6f}", sub["n_images"]]
            )


def write_count_csv(
    counts: list[CountRecord], predicted: dict[str, int], path: Path
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vine_id", "predicted", "field_count", "label_count"])
        for c in counts:
            if c.vine_id not in predicted:
                continue
            writer.writerow([c.vine_id, predicted[c.vine_id], c.field_count, c.label_count])


def benchmark(model, images, repetitions: int = 10) -> dict:
    """Median forward latency per image after one warmup pass.

    ``images`` is a (N, 3, H, W) tensor batch processed one image at a time.
    Model-forward and end-to-end (including decode) timings are reported
    separately, alongside a hardware descriptor.
    """
    import torch

    from .model import decode as model_decode

    if repetitions < 3:
        raise EvalError(f"repetitions must be >= 3, got {repetitions}")
    model.eval()
    n = images.shape[0]
    with torch.no_grad():
        model(images[0:1])  # warmup
        forward_times, full_times = [], []
        for _ in range(repetitions):
            for i in range(n):
                x = images[i : i + 1]
                t0 = time.perf_counter()
                out = model(x)
                t1 = time.perf_counter()
                model_decode(out, model.cfg, conf_threshold=0.25)
                t2 = time.perf_counter()
                forward_times.append((t1 - t0) * 1000.0)
                full_times.append((t2 - t0) * 1000.0)
    return {
        "latency_ms_per_image": float(np.median(forward_times)),
        "latency_ms_end_to_end": float(np.median(full_times)),
        "repetitions": repetitions,
        "hardware": f"{platform.machine()} {platform.processor() or 'cpu'}".strip(),
    }
