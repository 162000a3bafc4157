"""Detector graphs: convolutional CSP blocks, windowed-attention encoder
blocks, and their integration into a three-scale anchor-based detector.

Two variants share one skeleton. The baseline keeps a CSP bottleneck (C3)
stage at stride 32; the attention variant swaps that stage for a pair of
alternating plain/shifted window-attention encoder blocks behind 1x1 channel
projections. The seam between channel-first conv maps and tokens-last
attention layout lives entirely inside :class:`SwinStage`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .geometry import BBox

# canonical three-scale anchor priors, stated for 640px input
CANONICAL_ANCHORS = (
    ((10.0, 13.0), (16.0, 30.0), (33.0, 23.0)),
    ((30.0, 61.0), (62.0, 45.0), (59.0, 119.0)),
    ((116.0, 90.0), (156.0, 198.0), (373.0, 326.0)),
)
STRIDES = (8, 16, 32)
CHECKPOINT_FORMAT_VERSION = "1"


class ModelError(ValueError):
    """Raised for invalid configurations and construction-time shape conflicts."""


def make_divisible(value: float, divisor: int = 8) -> int:
    return max(divisor, int(math.ceil(value / divisor) * divisor))


@dataclass(frozen=True)
class SwinConfig:
    """Window-attention stage hyperparameters; depth must be even so blocks
    alternate plain and shifted windows."""

    window_size: int = 4
    embed_dim: int = 96
    num_heads: int = 3
    mlp_ratio: float = 4.0
    depth: int = 2

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ModelError(f"window_size must be positive, got {self.window_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ModelError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.depth < 2 or self.depth % 2 != 0:
            raise ModelError(f"depth must be even and >= 2, got {self.depth}")
        if self.mlp_ratio <= 0:
            raise ModelError(f"mlp_ratio must be positive, got {self.mlp_ratio}")

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "mlp_ratio": self.mlp_ratio,
            "depth": self.depth,
        }


@dataclass(frozen=True)
class ModelConfig:
    """Detector configuration. ``anchors=None`` scales the canonical nine
    priors by input_size/640; ``swin=None`` builds the plain baseline.

    ``swin_stages`` counts backbone C3 stages replaced from the deep end:
    1 replaces only the stride-32 stage, 2 also the stride-16 stage, 3 all
    three detection-scale stages.
    """

    input_size: int = 256
    num_classes: int = 1
    width_multiple: float = 0.25
    depth_multiple: float = 0.33
    anchors: tuple | None = None
    swin: SwinConfig | None = None
    swin_stages: int = 1
    keep_sppf: bool = True

    def __post_init__(self) -> None:
        if self.input_size % 32 != 0:
            raise ModelError(f"input_size {self.input_size} not divisible by 32")
        if self.num_classes < 1:
            raise ModelError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.width_multiple <= 0 or self.depth_multiple <= 0:
            raise ModelError("width/depth multiples must be positive")
        if not 1 <= self.swin_stages <= 3:
            raise ModelError(f"swin_stages must be in 1..3, got {self.swin_stages}")
        if self.anchors is not None:
            if len(self.anchors) != 3 or any(len(scale) != 3 for scale in self.anchors):
                raise ModelError("anchors must hold 3 scales of 3 (w, h) pairs")
        if self.swin is not None:
            for stage in range(self.swin_stages):
                stride = STRIDES[2 - stage]
                side = self.input_size // stride
                if side % self.swin.window_size != 0:
                    raise ModelError(
                        f"feature side {side} at stride {stride} not divisible by "
                        f"window {self.swin.window_size}"
                    )

    @property
    def scaled_anchors(self) -> tuple:
        if self.anchors is not None:
            return tuple(tuple(tuple(map(float, a)) for a in scale) for scale in self.anchors)
        scale = self.input_size / 640.0
        return tuple(
            tuple((w * scale, h * scale) for w, h in level) for level in CANONICAL_ANCHORS
        )

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "width_multiple": self.width_multiple,
            "depth_multiple": self.depth_multiple,
            "anchors": None
            if self.anchors is None
            else [[list(a) for a in scale] for scale in self.anchors],
            "swin": None if self.swin is None else self.swin.to_dict(),
            "swin_stages": self.swin_stages,
            "keep_sppf": self.keep_sppf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {
            "input_size", "num_classes", "width_multiple", "depth_multiple",
            "anchors", "swin", "swin_stages", "keep_sppf",
        }
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        swin = d.get("swin")
        anchors = d.get("anchors")
        return cls(
            input_size=int(d.get("input_size", 256)),
            num_classes=int(d.get("num_classes", 1)),
            width_multiple=float(d.get("width_multiple", 0.25)),
            depth_multiple=float(d.get("depth_multiple", 0.33)),
            anchors=None
            if anchors is None
            else tuple(tuple(tuple(map(float, a)) for a in scale) for scale in anchors),
            swin=None if swin is None else SwinConfig(**swin),
            swin_stages=int(d.get("swin_stages", 1)),
            keep_sppf=bool(d.get("keep_sppf", True)),
        )


# ---------------------------------------------------------------------------
# Convolutional blocks


class Conv(nn.Module):
    """Convolution, batch normalization, SiLU."""

    def __init__(self, c_in: int, c_out: int, k: int = 1, s: int = 1, p: int | None = None):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, k, s, k // 2 if p is None else p, bias=False)
        self.bn = nn.BatchNorm2d(c_out)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class Bottleneck(nn.Module):
    def __init__(self, c: int, shortcut: bool = True, expansion: float = 1.0):
        super().__init__()
        hidden = int(c * expansion)
        self.cv1 = Conv(c, hidden, 1)
        self.cv2 = Conv(hidden, c, 3)
        self.add = shortcut

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class C3(nn.Module):
    """Cross-stage-partial block: split, bottleneck stack, concat, fuse.

    Three convolutions surround the stack (two entry splits, one fuse).
    """

    def __init__(self, c_in: int, c_out: int, n: int = 1, shortcut: bool = True):
        super().__init__()
        if c_out % 2 != 0:
            raise ModelError(f"C3 needs an even output channel count, got {c_out}")
        hidden = c_out // 2
        self.cv1 = Conv(c_in, hidden, 1)
        self.cv2 = Conv(c_in, hidden, 1)
        self.cv3 = Conv(2 * hidden, c_out, 1)
        self.m = nn.Sequential(*(Bottleneck(hidden, shortcut) for _ in range(n)))

    def forward(self, x):
        return self.cv3(torch.cat((self.m(self.cv1(x)), self.cv2(x)), dim=1))


class SPPF(nn.Module):
    """Serial max-pool pyramid: three chained pools concatenated with the
    input branch (4x channels at the seam) and fused by 1x1 convolution."""

    def __init__(self, c_in: int, c_out: int, pool_kernel: int = 5):
        super().__init__()
        hidden = c_in // 2
        self.cv1 = Conv(c_in, hidden, 1)
        self.cv2 = Conv(hidden * 4, c_out, 1)
        self.pool = nn.MaxPool2d(pool_kernel, stride=1, padding=pool_kernel // 2)

    def forward(self, x):
        x = self.cv1(x)
        y1 = self.pool(x)
        y2 = self.pool(y1)
        y3 = self.pool(y2)
        return self.cv2(torch.cat((x, y1, y2, y3), dim=1))


# ---------------------------------------------------------------------------
# Window attention blocks


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * H/M * W/M, M, M, C); exact inverse of window_reverse."""
    b, h, w, c = x.shape
    m = window_size
    if h % m != 0 or w % m != 0:
        raise ModelError(f"feature map {h}x{w} not divisible by window size {m}")
    x = x.view(b, h // m, m, w // m, m, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, m, m, c)


def window_reverse(windows: torch.Tensor, window_size: int, h: int, w: int) -> torch.Tensor:
    """(B * H/M * W/M, M, M, C) -> (B, H, W, C)."""
    m = window_size
    if h % m != 0 or w % m != 0:
        raise ModelError(f"feature map {h}x{w} not divisible by window size {m}")
    b = windows.shape[0] // ((h // m) * (w // m))
    x = windows.view(b, h // m, w // m, m, m, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class WindowAttention(nn.Module):
    """Multi-head self-attention within M x M windows with a learned relative
    position bias of shape (2M-1)^2 per head."""

    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ModelError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5

        m = window_size
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * m - 1) ** 2, num_heads)
        )
        coords = torch.stack(
            torch.meshgrid(torch.arange(m), torch.arange(m), indexing="ij")
        ).flatten(1)
        relative = coords[:, :, None] - coords[:, None, :]
        relative = relative.permute(1, 2, 0) + (m - 1)
        index = relative[..., 0] * (2 * m - 1) + relative[..., 1]
        self.register_buffer("relative_position_index", index)

        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor | None = None, return_attn: bool = False
    ):
        """x: (num_windows * B, M*M, C); mask: (num_windows, M*M, M*M) or None."""
        b_, n, c = x.shape
        if n != self.window_size**2:
            raise ModelError(f"expected {self.window_size ** 2} tokens per window, got {n}")
        qkv = (
            self.qkv(x)
            .reshape(b_, n, 3, self.num_heads, c // self.num_heads)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        bias = bias.view(n, n, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(b_ // nw, nw, self.num_heads, n, n) + mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(-1, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b_, n, c)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


def shift_window_mask(h: int, w: int, window_size: int, shift: int) -> torch.Tensor:
    """Additive attention mask (-100 on cross-region pairs) for the shifted pass.

    Regions are labeled by the pre-shift window layout so rolled-in tokens
    from different original windows never exchange weight.
    """
    m = window_size
    img_mask = torch.zeros(1, h, w, 1)
    regions = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    count = 0
    for hs in regions:
        for ws in regions:
            img_mask[:, hs, ws, :] = count
            count += 1
    windows = window_partition(img_mask, m).view(-1, m * m)
    mask = windows.unsqueeze(1) - windows.unsqueeze(2)
    return mask.masked_fill(mask != 0, -100.0).masked_fill(mask == 0, 0.0)


class SwinBlock(nn.Module):
    """Pre-norm encoder block: (shifted-)window attention then MLP, each with
    a residual connection. Operates on (B, H, W, C) token maps."""

    def __init__(
        self,
        dim: int,
        resolution: tuple[int, int],
        num_heads: int,
        window_size: int,
        shifted: bool,
        mlp_ratio: float = 4.0,
    ):
        super().__init__()
        h, w = resolution
        if min(h, w) < window_size:
            raise ModelError(
                f"feature side {h}x{w} smaller than window size {window_size}"
            )
        self.resolution = resolution
        self.window_size = window_size
        self.shift_size = window_size // 2 if shifted else 0
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        if self.shift_size:
            self.register_buffer("attn_mask", shift_window_mask(h, w, window_size, self.shift_size))
        else:
            self.attn_mask = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        if (h, w) != self.resolution:
            raise ModelError(f"expected {self.resolution} feature map, got {(h, w)}")
        shortcut = x
        x = self.norm1(x)
        if self.shift_size:
            x = torch.roll(x, shifts=(-self.shift_size, -self.shift_size), dims=(1, 2))
        windows = window_partition(x, self.window_size).view(
            -1, self.window_size**2, c
        )
        attended = self.attn(windows, mask=self.attn_mask)
        x = window_reverse(
            attended.view(-1, self.window_size, self.window_size, c),
            self.window_size, h, w,
        )
        if self.shift_size:
            x = torch.roll(x, shifts=(self.shift_size, self.shift_size), dims=(1, 2))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class SwinStage(nn.Module):
    """Backbone stage of alternating plain/shifted encoder blocks.

    Adapts the conv-map layout at both ends: 1x1 projection into embed_dim,
    permute (B, C, H, W) -> (B, H, W, C) for the blocks, permute back, 1x1
    projection out. Spatial dims are preserved.
    """

    def __init__(self, c_in: int, c_out: int, resolution: tuple[int, int], cfg: SwinConfig):
        super().__init__()
        self.proj_in = Conv(c_in, cfg.embed_dim, 1)
        self.blocks = nn.Sequential(
            *(
                SwinBlock(
                    cfg.embed_dim,
                    resolution,
                    cfg.num_heads,
                    cfg.window_size,
                    shifted=(i % 2 == 1),
                    mlp_ratio=cfg.mlp_ratio,
                )
                for i in range(cfg.depth)
            )
        )
        self.proj_out = Conv(cfg.embed_dim, c_out, 1)

    def forward(self, x):
        x = self.proj_in(x)
        x = x.permute(0, 2, 3, 1)
        x = self.blocks(x)
        x = x.permute(0, 3, 1, 2).contiguous()
        return self.proj_out(x)


# ---------------------------------------------------------------------------
# Detection head and full graph


class Detect(nn.Module):
    """Three 1x1 convolutions mapping neck features to raw head maps of shape
    (B, 3, H/s, W/s, 5 + num_classes)."""

    def __init__(
        self,
        num_classes: int,
        anchors: tuple,
        channels: tuple[int, int, int],
        input_size: int,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.per_anchor = 5 + num_classes
        self.num_anchors = len(anchors[0])
        self.m = nn.ModuleList(
            nn.Conv2d(c, self.num_anchors * self.per_anchor, 1) for c in channels
        )
        self.register_buffer("anchors", torch.tensor(anchors, dtype=torch.float32))
        self.register_buffer("strides", torch.tensor(STRIDES, dtype=torch.float32))
        self._init_biases(input_size)

    def _init_biases(self, input_size: int) -> None:
        # start objectness near the expected foreground rate so early loss is tame
        for conv, stride in zip(self.m, STRIDES):
            b = conv.bias.view(self.num_anchors, self.per_anchor)
            with torch.no_grad():
                b[:, 4] += math.log(8.0 / (input_size / stride) ** 2)
                if self.num_classes > 1:
                    b[:, 5:] += math.log(0.6 / (self.num_classes - 0.99))

    def forward(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        out = []
        for conv, x in zip(self.m, features):
            b, _, h, w = x.shape
            y = conv(x).view(b, self.num_anchors, self.per_anchor, h, w)
            out.append(y.permute(0, 1, 3, 4, 2).contiguous())
        return out


class Detector(nn.Module):
    """Full detection graph: stem and four downsampling stages, optional
    pool pyramid, top-down + bottom-up neck, three-scale head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

        def ch(c: int) -> int:
            return make_divisible(c * cfg.width_multiple)

        def rep(n: int) -> int:
            return max(round(n * cfg.depth_multiple), 1)

        def detection_stage(base: int, n: int, stride: int, order_from_end: int) -> nn.Module:
            if cfg.swin is not None and order_from_end < cfg.swin_stages:
                side = cfg.input_size // stride
                return SwinStage(ch(base), ch(base), (side, side), cfg.swin)
            return C3(ch(base), ch(base), rep(n))

        self.stem = Conv(3, ch(64), 6, 2, 2)
        self.down1 = Conv(ch(64), ch(128), 3, 2)
        self.stage4 = C3(ch(128), ch(128), rep(3))
        self.down2 = Conv(ch(128), ch(256), 3, 2)
        self.stage8 = detection_stage(256, 6, 8, 2)
        self.down3 = Conv(ch(256), ch(512), 3, 2)
        self.stage16 = detection_stage(512, 9, 16, 1)
        self.down4 = Conv(ch(512), ch(1024), 3, 2)
        self.stage32 = detection_stage(1024, 3, 32, 0)
        self.sppf = SPPF(ch(1024), ch(1024)) if cfg.keep_sppf else nn.Identity()

        self.lateral5 = Conv(ch(1024), ch(512), 1)
        self.lateral4 = Conv(ch(512), ch(256), 1)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.fuse_t4 = C3(ch(512) * 2, ch(512), rep(3), shortcut=False)
        self.fuse_t3 = C3(ch(256) * 2, ch(256), rep(3), shortcut=False)
        self.down_p3 = Conv(ch(256), ch(256), 3, 2)
        self.fuse_b4 = C3(ch(256) * 2, ch(512), rep(3), shortcut=False)
        self.down_p4 = Conv(ch(512), ch(512), 3, 2)
        self.fuse_b5 = C3(ch(512) * 2, ch(1024), rep(3), shortcut=False)
        self.detect = Detect(
            cfg.num_classes,
            cfg.scaled_anchors,
            (ch(256), ch(512), ch(1024)),
            cfg.input_size,
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.stage4(self.down1(self.stem(x)))
        p3 = self.stage8(self.down2(x))
        p4 = self.stage16(self.down3(p3))
        p5 = self.sppf(self.stage32(self.down4(p4)))

        t5 = self.lateral5(p5)
        m4 = self.fuse_t4(torch.cat((self.up(t5), p4), dim=1))
        t4 = self.lateral4(m4)
        o3 = self.fuse_t3(torch.cat((self.up(t4), p3), dim=1))
        o4 = self.fuse_b4(torch.cat((self.down_p3(o3), t4), dim=1))
        o5 = self.fuse_b5(torch.cat((self.down_p4(o4), t5), dim=1))
        return self.detect([o3, o4, o5])

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def graph_summary(self) -> dict:
        """Counts used by the structural contract: composition of the
        stride-32 backbone stage and total size."""
        c3_at_32 = sum(1 for m in self.stage32.modules() if isinstance(m, C3))
        swin_blocks = sum(1 for m in self.modules() if isinstance(m, SwinBlock))
        return {
            "c3_at_stride32_stage": c3_at_32,
            "swin_blocks": swin_blocks,
            "parameters": self.parameter_count,
        }


def build_detector(cfg: ModelConfig) -> Detector:
    return Detector(cfg)


# ---------------------------------------------------------------------------
# Decode and checkpointing


def decode(
    outputs: list[torch.Tensor], cfg: ModelConfig, conf_threshold: float = 0.25
) -> list[list[BBox]]:
    """Map raw head tensors to pixel-space boxes per image.

    Center: (2*sigmoid(txy) - 0.5 + cell) * stride. Size: (2*sigmoid(twh))^2
    * anchor. Confidence: sigmoid(obj) * sigmoid(best class). Boxes under the
    threshold are dropped; survivors are clipped to the canvas.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ModelError(f"conf_threshold must lie in [0, 1], got {conf_threshold}")
    anchors = cfg.scaled_anchors
    batch = outputs[0].shape[0]
    results: list[list[BBox]] = [[] for _ in range(batch)]
    size = float(cfg.input_size)
    for scale, (out, stride) in enumerate(zip(outputs, STRIDES)):
        sig = torch.sigmoid(out.detach())
        b, na, h, w, _ = sig.shape
        gy, gx = torch.meshgrid(
            torch.arange(h, dtype=sig.dtype), torch.arange(w, dtype=sig.dtype), indexing="ij"
        )
        cx = (2.0 * sig[..., 0] - 0.5 + gx) * stride
        cy = (2.0 * sig[..., 1] - 0.5 + gy) * stride
        anchor = torch.tensor(anchors[scale], dtype=sig.dtype)
        bw = (2.0 * sig[..., 2]) ** 2 * anchor[:, 0].view(1, na, 1, 1)
        bh = (2.0 * sig[..., 3]) ** 2 * anchor[:, 1].view(1, na, 1, 1)
        cls_conf, cls_id = sig[..., 5:].max(dim=-1)
        conf = sig[..., 4] * cls_conf
        # confidence is a product of sigmoids, mathematically < 1; use a strict
        # comparison at threshold 1.0 so float rounding cannot leak boxes through
        keep = conf > conf_threshold if conf_threshold >= 1.0 else conf >= conf_threshold
        for img, a, yy, xx in zip(*torch.nonzero(keep, as_tuple=True)):
            half_w = bw[img, a, yy, xx].item() / 2.0
            half_h = bh[img, a, yy, xx].item() / 2.0
            x_c, y_c = cx[img, a, yy, xx].item(), cy[img, a, yy, xx].item()
            x1, y1 = max(x_c - half_w, 0.0), max(y_c - half_h, 0.0)
            x2, y2 = min(x_c + half_w, size), min(y_c + half_h, size)
            if x2 <= x1 or y2 <= y1:
                continue
            results[int(img)].append(
                BBox(
                    x1, y1, x2, y2,
                    class_id=int(cls_id[img, a, yy, xx]),
                    confidence=float(conf[img, a, yy, xx]),
                )
            )
    return results


def save_checkpoint(model: Detector, path, extra: dict | None = None) -> None:
    """Self-describing archive: format version, config echo, weights keyed by
    graph path, optional run extras."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[Detector, dict]:
    """Rebuild the detector a checkpoint describes; returns (model, extras)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ModelError(f"unsupported checkpoint format version {version!r}")
    cfg = ModelConfig.from_dict(payload["config"])
    model = build_detector(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
