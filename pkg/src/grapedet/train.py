"""Target assignment, composite detection loss, and the training loop.

Assignment follows the wh-ratio convention: a ground-truth box matches an
anchor when max(w/aw, aw/w, h/ah, ah/h) stays under the ratio threshold, and
the matched grid cell is expanded with up to two nearest neighbor cells.
The loss combines a complete-IoU box term, binary objectness against soft
labels equal to the detached clipped CIoU, and a binary class term.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import evaluate
from .data import DatasetManifest, load_image
from .geometry import BBox, nms, to_pixels
from .model import Detector, ModelConfig, STRIDES, decode, save_checkpoint

logger = logging.getLogger(__name__)

# per-scale objectness balance, small-object scale weighted up
OBJ_BALANCE = (4.0, 1.0, 0.4)

HISTORY_HEADER = (
    "epoch", "loss_box", "loss_obj", "loss_cls",
    "val_precision", "val_recall", "val_map50", "val_f1",
)


class TrainError(RuntimeError):
    """Raised for invalid training configuration or non-finite optimization state."""


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 8
    lr_initial: float = 0.01
    lr_final_fraction: float = 0.1
    warmup_epochs: int = 3
    lambda_box: float = 0.05
    lambda_obj: float = 1.0
    lambda_cls: float = 0.5
    anchor_ratio_threshold: float = 4.0
    momentum: float = 0.937
    weight_decay: float = 5e-4
    seed: int = 0
    # validation pass settings used for the per-epoch history row
    eval_conf_threshold: float = 0.1
    eval_nms_iou: float = 0.45
    eval_match_iou: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise TrainError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be positive, got {self.batch_size}")
        for name in ("lambda_box", "lambda_obj", "lambda_cls"):
            if getattr(self, name) <= 0:
                raise TrainError(f"{name} must be positive")
        if self.anchor_ratio_threshold <= 1:
            raise TrainError(
                f"anchor_ratio_threshold must exceed 1, got {self.anchor_ratio_threshold}"
            )
        if self.lr_initial <= 0 or not 0 < self.lr_final_fraction <= 1:
            raise TrainError("lr_initial must be positive and lr_final_fraction in (0, 1]")


@dataclass
class ScaleTargets:
    """Matched entries for one head scale."""

    indices: torch.Tensor  # (N, 4) long: image, anchor, grid_y, grid_x
    boxes: torch.Tensor  # (N, 4) float: cx offset, cy offset (cell-relative), w, h in grid units
    anchors: torch.Tensor  # (N, 2) float: anchor w, h in grid units
    classes: torch.Tensor  # (N,) long

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])

    def to(self, device) -> "ScaleTargets":
        return ScaleTargets(
            indices=self.indices.to(device),
            boxes=self.boxes.to(device),
            anchors=self.anchors.to(device),
            classes=self.classes.to(device),
        )


@dataclass
class AssignedTargets:
    per_scale: list[ScaleTargets]

    @property
    def total_count(self) -> int:
        return sum(s.count for s in self.per_scale)

    def to(self, device) -> "AssignedTargets":
        return AssignedTargets(per_scale=[s.to(device) for s in self.per_scale])


def assign_targets(
    gt: list, cfg: ModelConfig, ratio_threshold: float = 4.0
) -> AssignedTargets:
    """Assign ground truth to anchors and cells for every head scale.

    ``gt`` is a per-image list of BBox lists in input-canvas pixels; a flat
    list of BBox is treated as a single image. A contested (anchor, cell)
    slot goes to the larger box; the order of ground-truth boxes does not
    matter beyond that documented tie rule.
    """
    if gt and isinstance(gt[0], BBox):
        gt = [gt]
    anchors = cfg.scaled_anchors
    per_scale = []
    for scale, stride in enumerate(STRIDES):
        n_cells = cfg.input_size // stride
        claimed: dict[tuple, tuple] = {}
        for img, boxes in enumerate(gt):
            # larger boxes first so they win contested cells regardless of input order
            ordered = sorted(boxes, key=lambda b: (-b.area, b.x1, b.y1, b.x2, b.y2))
            for b in ordered:
                gw, gh = b.width / stride, b.height / stride
                gcx, gcy = b.center[0] / stride, b.center[1] / stride
                for a_idx, (aw_px, ah_px) in enumerate(anchors[scale]):
                    aw, ah = aw_px / stride, ah_px / stride
                    ratio = max(gw / aw, aw / gw, gh / ah, ah / gh)
                    if ratio >= ratio_threshold:
                        continue
                    gx = min(int(gcx), n_cells - 1)
                    gy = min(int(gcy), n_cells - 1)
                    fx, fy = gcx - gx, gcy - gy
                    cells = [(gy, gx)]
                    nx = gx - 1 if fx <= 0.5 else gx + 1
                    ny = gy - 1 if fy <= 0.5 else gy + 1
                    if 0 <= nx < n_cells:
                        cells.append((gy, nx))
                    if 0 <= ny < n_cells:
                        cells.append((ny, gx))
                    for cy_cell, cx_cell in cells:
                        key = (img, a_idx, cy_cell, cx_cell)
                        if key in claimed:
                            continue
                        claimed[key] = (
                            gcx - cx_cell, gcy - cy_cell, gw, gh, aw, ah, b.class_id
                        )
        keys = sorted(claimed)
        if keys:
            rows = [claimed[k] for k in keys]
            per_scale.append(
                ScaleTargets(
                    indices=torch.tensor(keys, dtype=torch.long),
                    boxes=torch.tensor([r[:4] for r in rows], dtype=torch.float32),
                    anchors=torch.tensor([r[4:6] for r in rows], dtype=torch.float32),
                    classes=torch.tensor([r[6] for r in rows], dtype=torch.long),
                )
            )
        else:
            per_scale.append(
                ScaleTargets(
                    indices=torch.zeros((0, 4), dtype=torch.long),
                    boxes=torch.zeros((0, 4)),
                    anchors=torch.zeros((0, 2)),
                    classes=torch.zeros((0,), dtype=torch.long),
                )
            )
    return AssignedTargets(per_scale=per_scale)


def ciou_tensor(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """Differentiable complete IoU on (cx, cy, w, h) rows; mirrors geometry.ciou."""
    px1, py1 = pred[:, 0] - pred[:, 2] / 2, pred[:, 1] - pred[:, 3] / 2
    px2, py2 = pred[:, 0] + pred[:, 2] / 2, pred[:, 1] + pred[:, 3] / 2
    tx1, ty1 = target[:, 0] - target[:, 2] / 2, target[:, 1] - target[:, 3] / 2
    tx2, ty2 = target[:, 0] + target[:, 2] / 2, target[:, 1] + target[:, 3] / 2

    iw = (torch.min(px2, tx2) - torch.max(px1, tx1)).clamp(min=0)
    ih = (torch.min(py2, ty2) - torch.max(py1, ty1)).clamp(min=0)
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + target[:, 2] * target[:, 3] - inter
    iou = inter / (union + eps)

    cw = torch.max(px2, tx2) - torch.min(px1, tx1)
    chh = torch.max(py2, ty2) - torch.min(py1, ty1)
    c2 = cw**2 + chh**2 + eps
    rho2 = (pred[:, 0] - target[:, 0]) ** 2 + (pred[:, 1] - target[:, 1]) ** 2
    v = (4 / math.pi**2) * (
        torch.atan(target[:, 2] / (target[:, 3] + eps))
        - torch.atan(pred[:, 2] / (pred[:, 3] + eps))
    ) ** 2
    with torch.no_grad():
        alpha = v / (1 - iou + v + eps)
    return iou - rho2 / c2 - alpha * v


def total_loss(
    pred: list[torch.Tensor], targets: AssignedTargets, cfg: TrainConfig
) -> tuple[torch.Tensor, dict]:
    """Composite loss and its weighted components.

    Objectness soft labels equal the detached CIoU of the matched prediction,
    clipped to [0, 1]; unmatched cells target zero. Components are reported
    after weighting, so the total is their plain sum.
    """
    device = pred[0].device
    lbox = torch.zeros((), device=device)
    lobj = torch.zeros((), device=device)
    lcls = torch.zeros((), device=device)
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    for scale, (p, st, balance) in enumerate(zip(pred, targets.per_scale, OBJ_BALANCE)):
        if not torch.isfinite(p).all():
            raise TrainError(f"non-finite prediction tensor at scale {scale}")
        tobj = torch.zeros_like(p[..., 4])
        if st.count:
            img, anc, gy, gx = st.indices.T
            ps = p[img, anc, gy, gx]
            pxy = 2.0 * torch.sigmoid(ps[:, :2]) - 0.5
            pwh = (2.0 * torch.sigmoid(ps[:, 2:4])) ** 2 * st.anchors
            ciou = ciou_tensor(torch.cat((pxy, pwh), dim=1), st.boxes)
            lbox = lbox + (1.0 - ciou).mean()
            tobj[img, anc, gy, gx] = ciou.detach().clamp(0.0, 1.0)
            tcls = torch.zeros_like(ps[:, 5:])
            tcls[torch.arange(st.count), st.classes] = 1.0
            lcls = lcls + bce(ps[:, 5:], tcls)
        lobj = lobj + bce(p[..., 4], tobj) * balance
    components = {
        "box": cfg.lambda_box * lbox,
        "obj": cfg.lambda_obj * lobj,
        "cls": cfg.lambda_cls * lcls,
    }
    for name, value in components.items():
        if not torch.isfinite(value):
            raise TrainError(f"non-finite {name} loss component")
    total = components["box"] + components["obj"] + components["cls"]
    return total, {k: float(v.detach()) for k, v in components.items()}


def lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Cosine decay from lr_initial to lr_initial * lr_final_fraction, with a
    linear warmup ramp over the first warmup_epochs."""
    span = max(cfg.epochs - 1, 1)
    cos_factor = cfg.lr_final_fraction + (1 - cfg.lr_final_fraction) * 0.5 * (
        1 + math.cos(math.pi * min(epoch, span) / span)
    )
    lr = cfg.lr_initial * cos_factor
    if epoch < cfg.warmup_epochs:
        lr *= (epoch + 1) / (cfg.warmup_epochs + 1)
    return lr


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class FitResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_map50: float = 0.0
    best_state: dict | None = None
    diverged: bool = False
    checkpoint_path: Path | None = None


def _load_training_tensors(
    manifest: DatasetManifest, input_size: int
) -> tuple[torch.Tensor, list[list[BBox]]]:
    """Preload images (stretch-resized to the square input) and pixel boxes."""
    images, boxes = [], []
    for rec in manifest.records:
        path = manifest.resolve(rec.image_path)
        with Image.open(path) as img:
            resized = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
        images.append(torch.from_numpy(np.array(resized)).permute(2, 0, 1).float() / 255.0)
        boxes.append([to_pixels(b, input_size, input_size) for b in rec.boxes])
    return torch.stack(images), boxes


def _validation_row(
    model: Detector, images: torch.Tensor, gt: list[list[BBox]], cfg: TrainConfig
) -> dict:
    model.eval()
    detections = []
    with torch.no_grad():
        for i in range(images.shape[0]):
            out = model(images[i : i + 1])
            [dets] = decode(out, model.cfg, conf_threshold=cfg.eval_conf_threshold)
            detections.append(nms(dets, iou_threshold=cfg.eval_nms_iou))
    matches = [
        evaluate.match(d, g, iou_threshold=cfg.eval_match_iou)
        for d, g in zip(detections, gt)
    ]
    ap = evaluate.average_precision(matches)
    tp = sum(sum(m.tp_flags) for m in matches)
    n_det = sum(len(m.tp_flags) for m in matches)
    n_gt = sum(m.fn_count + sum(m.tp_flags) for m in matches)
    precision = tp / n_det if n_det else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return {
        "val_precision": precision,
        "val_recall": recall,
        "val_map50": ap,
        "val_f1": evaluate.f1(precision, recall),
    }


def write_history(rows: list[dict], path: Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        for row in rows:
            writer.writerow(
                [row["epoch"]] + [f"{row[k]:.6f}" for k in HISTORY_HEADER[1:]]
            )


def fit(
    model: Detector,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: TrainConfig,
    out_dir: Path | None = None,
    device: str = "cpu",
) -> FitResult:
    """Optimize the detector; returns history plus the best-validation weights.

    Deterministic for a given seed in this single-worker implementation. On a
    non-finite loss the loop aborts, keeping the last good checkpoint.
    """
    train_sources = {r.source_id for r in train_manifest.records}
    val_sources = {r.source_id for r in val_manifest.records}
    overlap = train_sources & val_sources
    if overlap:
        raise TrainError(f"train/val share source_ids, e.g. {sorted(overlap)[:3]}")

    torch.manual_seed(cfg.seed)
    dev = torch.device(device)
    model.to(dev)
    result = FitResult(best_state=copy.deepcopy(model.state_dict()))
    if cfg.epochs == 0:
        return result

    images, gt_boxes = _load_training_tensors(train_manifest, model.cfg.input_size)
    val_images, val_gt = _load_training_tensors(val_manifest, model.cfg.input_size)
    val_images = val_images.to(dev)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=cfg.lr_initial,
        momentum=cfg.momentum,
        nesterov=True,
        weight_decay=cfg.weight_decay,
    )
    n = images.shape[0]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        lr = lr_for_epoch(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = {"box": 0.0, "obj": 0.0, "cls": 0.0}
        batches = 0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = images[idx].to(dev)
                targets = assign_targets(
                    [gt_boxes[i] for i in idx], model.cfg, cfg.anchor_ratio_threshold
                ).to(dev)
                pred = model(batch)
                loss, comps = total_loss(pred, targets, cfg)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                for k in sums:
                    sums[k] += comps[k]
                batches += 1
        except TrainError as exc:
            logger.warning("aborting at epoch %d: %s", epoch, exc)
            result.diverged = True
            break
        row = {"epoch": epoch}
        row.update({f"loss_{k}": sums[k] / batches for k in ("box", "obj", "cls")})
        row.update(_validation_row(model, val_images, val_gt, cfg))
        result.history.append(row)
        if row["val_map50"] >= result.best_val_map50:
            result.best_val_map50 = row["val_map50"]
            result.best_epoch = epoch
            result.best_state = copy.deepcopy(model.state_dict())
            if out_dir is not None:
                best_model = model
                current = copy.deepcopy(model.state_dict())
                best_model.load_state_dict(result.best_state)
                save_checkpoint(
                    best_model,
                    out_dir / "best.pt",
                    extra={"epoch": epoch, "val_map50": row["val_map50"]},
                )
                best_model.load_state_dict(current)
        logger.info(
            "epoch %d lr %.5f box %.4f obj %.4f cls %.4f val_map50 %.4f",
            epoch, lr, row["loss_box"], row["loss_obj"], row["loss_cls"], row["val_map50"],
        )

    if out_dir is not None:
        save_checkpoint(model, out_dir / "last.pt", extra={"epoch": cfg.epochs - 1})
        write_history(result.history, out_dir / "history.csv")
        result.checkpoint_path = out_dir / "best.pt"
        if not (out_dir / "best.pt").exists():
            save_checkpoint(model, out_dir / "best.pt", extra={})
    return result
