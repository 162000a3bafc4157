"""Axis-aligned box primitives: format conversion, IoU/CIoU overlap, greedy NMS.

Boxes use continuous corner coordinates with exclusive area (x2-x1)*(y2-y1),
so a box and its pixel raster never disagree by the classic +/-1 pixel.
All functions are pure; callers may share them freely across workers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BBox:
    """Corner-format box in pixels. ``confidence`` is None for ground truth."""

    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int = 0
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def clip(self, width: float, height: float) -> "BBox":
        """Clip to the canvas [0, width] x [0, height]; raises if nothing remains."""
        return replace(
            self,
            x1=min(max(self.x1, 0.0), width),
            y1=min(max(self.y1, 0.0), height),
            x2=min(max(self.x2, 0.0), width),
            y2=min(max(self.y2, 0.0), height),
        )


@dataclass(frozen=True)
class NormBox:
    """Center-format box as fractions of image width/height, the label-file layout."""

    cx: float
    cy: float
    w: float
    h: float
    class_id: int = 0


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; zero-area degenerate overlap counts as 0."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def ciou(a: BBox, b: BBox) -> float:
    """Complete IoU: IoU minus center-distance and aspect-consistency penalties.

    Always <= iou(a, b); equals it when centers coincide and aspect ratios match.
    Range (-1, 1].
    """
    overlap = iou(a, b)
    ax, ay = a.center
    bx, by = b.center
    rho2 = (ax - bx) ** 2 + (ay - by) ** 2
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    c2 = cw * cw + ch * ch
    dist = rho2 / c2 if c2 > 0.0 else 0.0
    v = (4.0 / math.pi**2) * (math.atan(a.width / a.height) - math.atan(b.width / b.height)) ** 2
    alpha = v / (1.0 - overlap + v) if v > 0.0 else 0.0
    return overlap - dist - alpha * v


def _suppression_order(box: BBox) -> tuple[float, float, float]:
    # Descending confidence, ties broken by ascending x1 then y1 for determinism.
    assert box.confidence is not None
    return (-box.confidence, box.x1, box.y1)


def nms(boxes: list[BBox], iou_threshold: float) -> list[BBox]:
    """Greedy per-class non-maximum suppression, output sorted by confidence."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    for b in boxes:
        if b.confidence is None:
            raise ValueError("nms requires confidence on every box")
    survivors: list[BBox] = []
    for box in sorted(boxes, key=_suppression_order):
        if all(
            keep.class_id != box.class_id or iou(keep, box) <= iou_threshold
            for keep in survivors
        ):
            survivors.append(box)
    return survivors


def to_pixels(n: NormBox, width: float, height: float) -> BBox:
    """Convert a normalized center-format box to a pixel corner box, clipping if needed."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image extent must be positive, got {width}x{height}")
    x1 = (n.cx - n.w / 2.0) * width
    y1 = (n.cy - n.h / 2.0) * height
    x2 = (n.cx + n.w / 2.0) * width
    y2 = (n.cy + n.h / 2.0) * height
    if x1 < 0.0 or y1 < 0.0 or x2 > width or y2 > height:
        logger.warning("normalized box spills outside the canvas, clipping: %s", n)
    return BBox(x1, y1, x2, y2, class_id=n.class_id).clip(width, height)


def to_norm(b: BBox, width: float, height: float) -> NormBox:
    """Inverse of :func:`to_pixels`; round trip is identity within 1e-9."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image extent must be positive, got {width}x{height}")
    return NormBox(
        cx=(b.x1 + b.x2) / 2.0 / width,
        cy=(b.y1 + b.y2) / 2.0 / height,
        w=(b.x2 - b.x1) / width,
        h=(b.y2 - b.y1) / height,
        class_id=b.class_id,
    )
