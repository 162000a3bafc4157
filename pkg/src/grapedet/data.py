"""Dataset handling for vineyard imagery.

Covers manifest ingestion, condition stratification, grouped train/val/test
splitting, the four annotation-preserving augmentations, per-canopy box
filtering, and a synthetic vineyard renderer for desk-scale runs.

On-disk layout produced and consumed here:
    <root>/manifest.jsonl   one JSON object per image record
    <root>/labels/<stem>.txt   lines ``class_id cx cy w h`` (normalized, 6dp)
    <root>/counts.csv       ``vine_id,field_count,label_count`` with header
    <root>/images/*.png     8-bit RGB
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .geometry import BBox, NormBox, iou, to_norm, to_pixels

logger = logging.getLogger(__name__)

VARIETIES = ("chardonnay", "merlot")
WEATHERS = ("sunny", "cloudy")
MATURITIES = ("immature", "mature")
SUNLIGHTS = ("morning", "noon", "afternoon")
SPLITS = ("train", "val", "test", "unassigned")

STRATA_DIMENSIONS = ("weather", "maturity", "sunlight", "variety")


class DataError(ValueError):
    """Raised for malformed manifests, labels, or invalid dataset operations."""


def _check_enum(value, allowed, field_name):
    if value not in allowed:
        raise DataError(f"unknown {field_name} token {value!r}, expected one of {sorted(allowed)}")
    return value


@dataclass
class ImageRecord:
    """One image with its condition metadata and normalized boxes.

    ``source_id`` groups an augmented record with its raw parent; raw records
    have ``augment=None``. ``maturity`` may be None for captures outside the
    two compared growth stages.
    """

    image_path: str
    width: int
    height: int
    variety: str
    weather: str
    maturity: str | None
    sunlight: str
    capture_date: str
    vine_id: str
    source_id: str
    split: str = "unassigned"
    boxes: list[NormBox] = field(default_factory=list)
    canopy_roi: BBox | None = None
    augment: str | None = None
    debarred: bool = False

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"{self.image_path}: non-positive extent {self.width}x{self.height}")
        _check_enum(self.variety, VARIETIES, "variety")
        _check_enum(self.weather, WEATHERS, "weather")
        if self.maturity is not None:
            _check_enum(self.maturity, MATURITIES, "maturity")
        _check_enum(self.sunlight, SUNLIGHTS, "sunlight")
        _check_enum(self.split, SPLITS, "split")

    @property
    def is_raw(self) -> bool:
        return self.augment is None

    def to_dict(self) -> dict:
        d = {
            "image_path": self.image_path,
            "width": self.width,
            "height": self.height,
            "variety": self.variety,
            "weather": self.weather,
            "maturity": self.maturity,
            "sunlight": self.sunlight,
            "capture_date": self.capture_date,
            "vine_id": self.vine_id,
            "source_id": self.source_id,
            "split": self.split,
            "boxes": [[b.class_id, b.cx, b.cy, b.w, b.h] for b in self.boxes],
            "canopy_roi": None
            if self.canopy_roi is None
            else [self.canopy_roi.x1, self.canopy_roi.y1, self.canopy_roi.x2, self.canopy_roi.y2],
            "augment": self.augment,
            "debarred": self.debarred,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        known = {
            "image_path", "width", "height", "variety", "weather", "maturity",
            "sunlight", "capture_date", "vine_id", "source_id", "split",
            "boxes", "canopy_roi", "augment", "debarred",
        }
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown manifest keys: {sorted(unknown)}")
        boxes = [
            NormBox(cx=float(b[1]), cy=float(b[2]), w=float(b[3]), h=float(b[4]), class_id=int(b[0]))
            for b in d.get("boxes", [])
        ]
        roi = d.get("canopy_roi")
        canopy = None if roi is None else BBox(*map(float, roi))
        return cls(
            image_path=d["image_path"],
            width=int(d["width"]),
            height=int(d["height"]),
            variety=d["variety"],
            weather=d["weather"],
            maturity=d.get("maturity"),
            sunlight=d["sunlight"],
            capture_date=d.get("capture_date", ""),
            vine_id=d.get("vine_id", ""),
            source_id=d["source_id"],
            split=d.get("split", "unassigned"),
            boxes=boxes,
            canopy_roi=canopy,
            augment=d.get("augment"),
            debarred=bool(d.get("debarred", False)),
        )


@dataclass
class CountRecord:
    """Per-vine bunch counts: field-counted versus annotation-counted."""

    vine_id: str
    field_count: int
    label_count: int

    def __post_init__(self) -> None:
        if self.field_count < 0 or self.label_count < 0:
            raise DataError(f"{self.vine_id}: negative count")


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    counts: list[CountRecord] = field(default_factory=list)
    schema_version: str = "1"
    root: Path | None = None  # directory the relative paths resolve against; not serialized

    def validate(self) -> None:
        seen_paths = set()
        raw_sources = set()
        split_by_source: dict[str, str] = {}
        for r in self.records:
            if r.image_path in seen_paths:
                raise DataError(f"duplicate image_path {r.image_path!r}")
            seen_paths.add(r.image_path)
            if r.is_raw:
                if r.source_id in raw_sources:
                    raise DataError(f"duplicate raw source_id {r.source_id!r}")
                raw_sources.add(r.source_id)
            prev = split_by_source.setdefault(r.source_id, r.split)
            if prev != r.split:
                raise DataError(
                    f"source_id {r.source_id!r} spans splits {prev!r} and {r.split!r}"
                )

    def raw_records(self) -> list[ImageRecord]:
        return [r for r in self.records if r.is_raw]

    def records_for_split(self, split: str) -> list[ImageRecord]:
        _check_enum(split, SPLITS, "split")
        return [r for r in self.records if r.split == split]

    def resolve(self, rel_path: str) -> Path:
        return (self.root / rel_path) if self.root is not None else Path(rel_path)


# ---------------------------------------------------------------------------
# Manifest, label, and count file I/O


def _label_stem(image_path: str) -> str:
    return Path(image_path).stem


def format_label_lines(boxes: list[NormBox]) -> str:
    return "".join(
        f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes
    )


def parse_label_file(path: Path) -> list[NormBox]:
    """Parse ``class_id cx cy w h`` lines, clipping mildly out-of-range fields."""
    boxes = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            class_id = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if w <= 0 or h <= 0:
            raise DataError(f"{path}:{lineno}: non-positive box size {w}x{h}")
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and w <= 1.0 and h <= 1.0):
            logger.warning("%s:%d: box field outside [0, 1], clipping", path, lineno)
            cx, cy = min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0)
            w, h = min(w, 1.0), min(h, 1.0)
        boxes.append(NormBox(cx, cy, w, h, class_id=class_id))
    return boxes


def write_counts(counts: list[CountRecord], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["vine_id", "field_count", "label_count"])
        for c in counts:
            writer.writerow([c.vine_id, c.field_count, c.label_count])


def read_counts(path: Path) -> list[CountRecord]:
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [
            CountRecord(row["vine_id"], int(row["field_count"]), int(row["label_count"]))
            for row in reader
        ]


def save_manifest(manifest: DatasetManifest, root: Path, write_labels: bool = True) -> Path:
    """Write manifest.jsonl, labels/, and counts.csv under ``root``; returns the manifest path."""
    manifest.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.jsonl"
    with manifest_path.open("w", encoding="utf-8") as f:
        for r in manifest.records:
            f.write(json.dumps(r.to_dict()) + "\n")
    if write_labels:
        labels_dir = root / "labels"
        labels_dir.mkdir(exist_ok=True)
        for r in manifest.records:
            (labels_dir / f"{_label_stem(r.image_path)}.txt").write_text(
                format_label_lines(r.boxes), encoding="utf-8"
            )
    if manifest.counts:
        write_counts(manifest.counts, root / "counts.csv")
    manifest.root = root
    return manifest_path


def load_manifest(manifest_path: Path) -> DatasetManifest:
    """Load a manifest with its embedded boxes; reads counts.csv when present."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    records = []
    with manifest_path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{manifest_path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                records.append(ImageRecord.from_dict(d))
            except (DataError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{manifest_path}:{lineno}: {exc}") from exc
    root = manifest_path.parent
    counts_path = root / "counts.csv"
    counts = read_counts(counts_path) if counts_path.exists() else []
    manifest = DatasetManifest(records=records, counts=counts, root=root)
    manifest.validate()
    return manifest


def ingest(manifest_path: Path, labels_dir: Path) -> DatasetManifest:
    """Build a manifest from metadata lines plus external label files.

    Label files override any boxes embedded in the manifest lines. A missing
    label file yields a record with zero boxes and a warning.
    """
    manifest = load_manifest(Path(manifest_path))
    labels_dir = Path(labels_dir)
    for r in manifest.records:
        label_path = labels_dir / f"{_label_stem(r.image_path)}.txt"
        if not label_path.exists():
            logger.warning("no label file for %s, keeping zero boxes", r.image_path)
            r.boxes = []
            continue
        r.boxes = parse_label_file(label_path)
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# Stratification and splitting


def stratify(
    manifest: DatasetManifest, dimension: str, variety: str | None = None
) -> dict[str, int]:
    """Count raw records per condition value; records missing the value are skipped."""
    _check_enum(dimension, STRATA_DIMENSIONS, "dimension")
    if variety is not None:
        _check_enum(variety, VARIETIES, "variety")
    counts: dict[str, int] = {}
    for r in manifest.raw_records():
        if variety is not None and r.variety != variety:
            continue
        value = getattr(r, dimension)
        if value is None:
            continue
        counts[value] = counts.get(value, 0) + 1
    return counts


def split(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetManifest:
    """Assign train/val/test over source_id groups so augmented siblings stay together.

    Train and val group counts are floor(ratio * groups); the remainder goes
    to test. Deterministic for a given seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    keys = sorted({r.source_id for r in manifest.records})
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_train = math.floor(ratios[0] * len(keys))
    n_val = math.floor(ratios[1] * len(keys))
    assignment = {}
    for i, key in enumerate(order):
        if i < n_train:
            assignment[key] = "train"
        elif i < n_train + n_val:
            assignment[key] = "val"
        else:
            assignment[key] = "test"
    out = DatasetManifest(
        records=[replace(r, split=assignment[r.source_id]) for r in manifest.records],
        counts=manifest.counts,
        schema_version=manifest.schema_version,
        root=manifest.root,
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Augmentation transforms (image + box propagation)

RIGHT_ANGLES = (0, 90, 180, 270)
SMALL_ANGLE_LIMIT = 15.0
VISIBILITY_THRESHOLD = 0.3


def _rot90_box(b: BBox, k: int, width: float, height: float) -> BBox:
    """Exact corner remap for k quarter-turns clockwise on a width x height canvas."""
    if k == 1:
        return replace(b, x1=height - b.y2, y1=b.x1, x2=height - b.y1, y2=b.x2)
    if k == 2:
        return replace(b, x1=width - b.x2, y1=height - b.y2, x2=width - b.x1, y2=height - b.y1)
    if k == 3:
        return replace(b, x1=b.y1, y1=width - b.x2, x2=b.y2, y2=width - b.x1)
    return b


def _rotate_image_small(image: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the canvas center, clockwise for positive angles, same canvas size."""
    h, w = image.shape[:2]
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # Inverse map in (row, col) index coordinates; pixel i sits at coordinate i.
    matrix = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - matrix @ center
    if image.ndim == 2:
        return ndimage.affine_transform(
            image, matrix, offset=offset, order=1, mode="constant", cval=fill
        )
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.affine_transform(
            image[..., c].astype(np.float32), matrix, offset=offset,
            order=1, mode="constant", cval=fill,
        ).astype(image.dtype)
    return out


def _rotate_box_small(
    b: BBox, angle_deg: float, width: float, height: float, visibility_threshold: float
) -> BBox | None:
    """Axis-aligned hull of the rotated corners, clipped; None when too little survives."""
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = width / 2.0, height / 2.0
    xs, ys = [], []
    for x, y in ((b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2)):
        dx, dy = x - cx, y - cy
        xs.append(cx + dx * cos_t - dy * sin_t)
        ys.append(cy + dx * sin_t + dy * cos_t)
    x1, y1 = max(min(xs), 0.0), max(min(ys), 0.0)
    x2, y2 = min(max(xs), width), min(max(ys), height)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        return None
    if (x2 - x1) * (y2 - y1) < visibility_threshold * b.area:
        return None
    return replace(b, x1=x1, y1=y1, x2=x2, y2=y2)


def rotate(
    image: np.ndarray,
    boxes: list[BBox],
    angle: float,
    visibility_threshold: float = VISIBILITY_THRESHOLD,
    fill: float = 0.0,
) -> tuple[np.ndarray, list[BBox]]:
    """Rotate image and boxes clockwise by ``angle`` degrees.

    Right angles (0/90/180/270) remap corners exactly and swap the canvas for
    quarter turns; any other angle must lie within +/-15 degrees and uses the
    axis-aligned hull of the rotated corners, dropping boxes whose clipped
    area falls below ``visibility_threshold`` of the original.
    """
    h, w = image.shape[:2]
    wrapped = angle % 360.0
    if wrapped in RIGHT_ANGLES:
        k = int(wrapped) // 90
        out_image = np.ascontiguousarray(np.rot90(image, k=-k)) if k else image.copy()
        out_boxes = [_rot90_box(b, k, w, h) for b in boxes]
        return out_image, out_boxes
    signed = wrapped - 360.0 if wrapped > 180.0 else wrapped
    if abs(signed) > SMALL_ANGLE_LIMIT:
        raise DataError(
            f"unsupported rotation angle {angle}; use a right angle or |angle| <= {SMALL_ANGLE_LIMIT}"
        )
    out_image = _rotate_image_small(image, signed, fill=fill)
    out_boxes = []
    for b in boxes:
        rb = _rotate_box_small(b, signed, w, h, visibility_threshold)
        if rb is not None:
            out_boxes.append(rb)
    return out_image, out_boxes


def channel_enhance(image: np.ndarray, per_channel_gain: tuple[float, float, float]) -> np.ndarray:
    """Scale each channel by its gain (all gains in [0.5, 1.5]) and clip to 8-bit range."""
    gains = tuple(float(g) for g in per_channel_gain)
    if len(gains) != 3:
        raise DataError(f"expected 3 gains, got {len(gains)}")
    for g in gains:
        if not 0.5 <= g <= 1.5:
            raise DataError(f"channel gain {g} outside [0.5, 1.5]")
    scaled = image.astype(np.float32) * np.asarray(gains, dtype=np.float32)
    clipped = np.clip(scaled, 0.0, 255.0)
    if np.issubdtype(image.dtype, np.integer):
        return np.rint(clipped).astype(image.dtype)
    return clipped.astype(image.dtype)


def gaussian_noise_blur(
    image: np.ndarray,
    sigma_noise: float,
    sigma_blur: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Add zero-mean Gaussian noise, then Gaussian-blur; boxes are unaffected."""
    if sigma_noise < 0 or sigma_blur < 0:
        raise DataError("noise/blur sigmas must be non-negative")
    if sigma_noise == 0 and sigma_blur == 0:
        return image.copy()
    out = image.astype(np.float64)
    if sigma_noise > 0:
        if rng is None:
            rng = np.random.default_rng()
        out = out + rng.normal(0.0, sigma_noise, size=out.shape)
    if sigma_blur > 0:
        sigma = (sigma_blur, sigma_blur) + (0.0,) * (out.ndim - 2)
        out = ndimage.gaussian_filter(out, sigma=sigma)
    out = np.clip(out, 0.0, 255.0)
    if np.issubdtype(image.dtype, np.integer):
        return np.rint(out).astype(image.dtype)
    return out.astype(image.dtype)


def rectangle_discard(image: np.ndarray, rects: list[BBox], fill=0) -> np.ndarray:
    """Overwrite the listed rectangles with ``fill``; annotations stay untouched."""
    out = image.copy()
    h, w = image.shape[:2]
    for r in rects:
        x1 = max(int(math.floor(r.x1)), 0)
        y1 = max(int(math.floor(r.y1)), 0)
        x2 = min(int(math.ceil(r.x2)), w)
        y2 = min(int(math.ceil(r.y2)), h)
        if x2 > x1 and y2 > y1:
            out[y1:y2, x1:x2] = fill
    return out


# ---------------------------------------------------------------------------
# Augmentation planning over records

AUGMENT_KINDS = ("rot90", "rotate", "channel", "noiseblur", "discard")


def _sample_augment(rng: np.random.Generator, width: int, height: int) -> dict:
    kind = AUGMENT_KINDS[int(rng.integers(0, len(AUGMENT_KINDS)))]
    if kind == "rot90":
        return {"op": "rot90", "k": int(rng.integers(1, 4))}
    if kind == "rotate":
        return {"op": "rotate", "angle": round(float(rng.uniform(-15.0, 15.0)), 3)}
    if kind == "channel":
        gains = [round(float(g), 3) for g in rng.uniform(0.5, 1.5, size=3)]
        return {"op": "channel", "gains": gains}
    if kind == "noiseblur":
        return {
            "op": "noiseblur",
            "sigma_noise": round(float(rng.uniform(1.0, 8.0)), 3),
            "sigma_blur": round(float(rng.uniform(0.3, 1.5)), 3),
            "noise_seed": int(rng.integers(0, 2**31 - 1)),
        }
    rects = []
    for _ in range(int(rng.integers(1, 4))):
        rw = float(rng.uniform(0.05, 0.2)) * width
        rh = float(rng.uniform(0.05, 0.2)) * height
        x1 = float(rng.uniform(0, width - rw))
        y1 = float(rng.uniform(0, height - rh))
        rects.append([round(x1, 1), round(y1, 1), round(x1 + rw, 1), round(y1 + rh, 1)])
    return {"op": "discard", "rects": rects, "fill": int(rng.integers(0, 64))}


def _transform_boxes(spec: dict, boxes: list[NormBox], width: int, height: int):
    """Apply the geometric part of an augment spec to normalized boxes.

    Returns (boxes, new_width, new_height); photometric ops pass boxes through.
    """
    if spec["op"] == "rot90":
        k = spec["k"]
        nw, nh = (height, width) if k in (1, 3) else (width, height)
        out = [
            to_norm(_rot90_box(to_pixels(b, width, height), k, width, height), nw, nh)
            for b in boxes
        ]
        return out, nw, nh
    if spec["op"] == "rotate":
        out = []
        for b in boxes:
            rb = _rotate_box_small(
                to_pixels(b, width, height), spec["angle"], width, height, VISIBILITY_THRESHOLD
            )
            if rb is not None:
                out.append(to_norm(rb, width, height))
        return out, width, height
    return list(boxes), width, height


def augment_plan(rec: ImageRecord, n: int = 9, seed: int = 0) -> list[ImageRecord]:
    """Plan up to ``n`` augmented variants of a raw record.

    Variants whose transformed annotation set comes out empty are discarded,
    so the result may be shorter than ``n``. Planning is deterministic per
    seed and does not touch pixels; ``render_augment`` materializes images.
    """
    if not rec.is_raw:
        raise DataError(f"{rec.image_path}: augment_plan requires a raw record")
    rng = np.random.default_rng(seed)
    stem = Path(rec.image_path).stem
    suffix = Path(rec.image_path).suffix or ".png"
    parent = Path(rec.image_path).parent
    out = []
    for i in range(n):
        spec = _sample_augment(rng, rec.width, rec.height)
        boxes, nw, nh = _transform_boxes(spec, rec.boxes, rec.width, rec.height)
        if not boxes:
            logger.info("%s: variant %d (%s) left no boxes, discarded", rec.image_path, i, spec["op"])
            continue
        out.append(
            replace(
                rec,
                image_path=str(parent / f"{stem}_aug{i:02d}{suffix}"),
                width=nw,
                height=nh,
                boxes=boxes,
                canopy_roi=None,
                augment=json.dumps(spec, sort_keys=True),
            )
        )
    return out


def render_augment(image: np.ndarray, rec: ImageRecord) -> np.ndarray:
    """Materialize the pixels for an augmented record planned by :func:`augment_plan`."""
    if rec.augment is None:
        return image
    spec = json.loads(rec.augment)
    op = spec["op"]
    if op == "rot90":
        out, _ = rotate(image, [], 90.0 * spec["k"])
        return out
    if op == "rotate":
        out, _ = rotate(image, [], spec["angle"])
        return out
    if op == "channel":
        return channel_enhance(image, tuple(spec["gains"]))
    if op == "noiseblur":
        return gaussian_noise_blur(
            image,
            spec["sigma_noise"],
            spec["sigma_blur"],
            rng=np.random.default_rng(spec["noise_seed"]),
        )
    if op == "discard":
        rects = [BBox(*r) for r in spec["rects"]]
        return rectangle_discard(image, rects, fill=spec["fill"])
    raise DataError(f"unknown augment op {op!r}")


def apply_debar(rec: ImageRecord) -> ImageRecord:
    """Keep only boxes whose center lies inside the canopy ROI; evaluation-time helper."""
    if rec.canopy_roi is None:
        logger.warning("%s: no canopy_roi, debar skipped", rec.image_path)
        return rec
    roi = rec.canopy_roi
    kept = []
    for b in rec.boxes:
        px = to_pixels(b, rec.width, rec.height)
        cx, cy = px.center
        if roi.x1 <= cx <= roi.x2 and roi.y1 <= cy <= roi.y2:
            kept.append(b)
    return replace(rec, boxes=kept, debarred=True)


# ---------------------------------------------------------------------------
# Synthetic vineyard generator


@dataclass
class SynthProfile:
    """Appearance knobs for the synthetic renderer."""

    image_size: int = 256
    bunches_min: int = 2
    bunches_max: int = 4
    berry_radius_min: float = 5.0
    berry_radius_max: float = 8.0
    bunch_rows: int = 4  # triangular cluster, top row widest
    margin_frac: float = 0.08
    berry_colors: dict = field(
        default_factory=lambda: {
            ("chardonnay", "immature"): (132, 168, 82),
            ("chardonnay", "mature"): (196, 200, 110),
            ("merlot", "immature"): (150, 120, 90),
            ("merlot", "mature"): (78, 40, 72),
        }
    )
    background_base: tuple = (58, 82, 46)


def _render_background(rng: np.random.Generator, size: int, profile: SynthProfile) -> Image.Image:
    base = np.asarray(profile.background_base, dtype=np.float32)
    noise = rng.normal(0, 14, size=(size, size, 3)).astype(np.float32)
    vertical = np.linspace(-18, 18, size, dtype=np.float32)[:, None, None]
    canvas = np.clip(base + noise + vertical, 0, 255).astype(np.uint8)
    img = Image.fromarray(canvas, "RGB")
    draw = ImageDraw.Draw(img)
    for _ in range(10):
        # low-contrast foliage blobs
        x, y = rng.uniform(0, size, size=2)
        rx, ry = rng.uniform(size * 0.05, size * 0.18, size=2)
        shade = int(rng.integers(-25, 26))
        color = tuple(int(np.clip(c + shade, 0, 255)) for c in profile.background_base)
        draw.ellipse([x - rx, y - ry, x + rx, y + ry], fill=color)
    return img


def _render_bunch(
    draw: ImageDraw.ImageDraw,
    rng: np.random.Generator,
    cx: float,
    cy: float,
    radius: float,
    color: tuple,
) -> tuple[float, float, float, float]:
    """Draw a hanging triangular berry cluster; returns its tight pixel extent."""
    xs, ys = [], []
    rows = 4
    for row in range(rows):
        count = rows + 1 - row
        row_y = cy + row * radius * 1.5
        row_x0 = cx - (count - 1) * radius * 0.85
        for j in range(count):
            bx = row_x0 + j * radius * 1.7 + float(rng.uniform(-1.0, 1.0))
            by = row_y + float(rng.uniform(-1.0, 1.0))
            jitter = rng.integers(-12, 13, size=3)
            berry = tuple(int(np.clip(c + d, 0, 255)) for c, d in zip(color, jitter))
            draw.ellipse([bx - radius, by - radius, bx + radius, by + radius], fill=berry)
            hl = radius * 0.35
            highlight = tuple(min(255, c + 55) for c in berry)
            draw.ellipse(
                [bx - radius * 0.4 - hl / 2, by - radius * 0.4 - hl / 2,
                 bx - radius * 0.4 + hl / 2, by - radius * 0.4 + hl / 2],
                fill=highlight,
            )
            xs.extend([bx - radius, bx + radius])
            ys.extend([by - radius, by + radius])
    return min(xs), min(ys), max(xs), max(ys)


def synth_vineyard(
    n_images: int,
    seed: int = 0,
    out_dir: Path | None = None,
    profile: SynthProfile | None = None,
) -> DatasetManifest:
    """Render a synthetic bunch-detection dataset with exact ground truth.

    Condition metadata cycles round-robin over the survey enums so every
    value appears once n_images is modest. One vine per image; the per-vine
    field count adds a small occlusion surplus over the labeled count.
    """
    if n_images <= 0:
        raise DataError("n_images must be positive")
    profile = profile or SynthProfile()
    size = profile.image_size
    records, counts = [], []
    images: list[tuple[str, Image.Image]] = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        variety = VARIETIES[i % 2]
        weather = WEATHERS[(i // 2) % 2]
        maturity = MATURITIES[(i // 4) % 2]
        sunlight = SUNLIGHTS[i % 3]
        capture_date = "2019-07-15" if maturity == "immature" else "2019-09-15"
        img = _render_background(rng, size, profile)
        draw = ImageDraw.Draw(img)
        color = profile.berry_colors[(variety, maturity)]
        n_bunches = int(rng.integers(profile.bunches_min, profile.bunches_max + 1))
        margin = profile.margin_frac * size
        boxes_px: list[BBox] = []
        placed = 0
        attempts = 0
        while placed < n_bunches and attempts < 200:
            attempts += 1
            radius = float(rng.uniform(profile.berry_radius_min, profile.berry_radius_max))
            bw = radius * 7.0
            bh = radius * 7.0
            cx = float(rng.uniform(margin + bw / 2, size - margin - bw / 2))
            cy = float(rng.uniform(margin + bh / 2, size - margin - bh / 2))
            candidate = BBox(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2)
            if any(iou(candidate, b) > 0.02 for b in boxes_px):
                continue
            x1, y1, x2, y2 = _render_bunch(draw, rng, cx, cy - bh / 2 + radius, radius, color)
            boxes_px.append(
                BBox(max(x1, 0.0), max(y1, 0.0), min(x2, float(size)), min(y2, float(size)))
            )
            placed += 1
        image_name = f"images/img_{i:04d}.png"
        vine_id = f"vine_{i:04d}"
        rec = ImageRecord(
            image_path=image_name,
            width=size,
            height=size,
            variety=variety,
            weather=weather,
            maturity=maturity,
            sunlight=sunlight,
            capture_date=capture_date,
            vine_id=vine_id,
            source_id=f"img_{i:04d}",
            boxes=[to_norm(b, size, size) for b in boxes_px],
            canopy_roi=BBox(0.02 * size, 0.02 * size, 0.98 * size, 0.98 * size),
        )
        records.append(rec)
        label_count = len(boxes_px)
        counts.append(
            CountRecord(
                vine_id=vine_id,
                field_count=label_count + int(rng.integers(0, 2)),
                label_count=label_count,
            )
        )
        images.append((image_name, img))
    manifest = DatasetManifest(records=records, counts=counts)
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        for name, img in images:
            img.save(out_dir / name)
        save_manifest(manifest, out_dir)
    return manifest


def load_image(path: Path) -> np.ndarray:
    """Read an image file as (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_image(array: np.ndarray, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8), "RGB").save(path)
