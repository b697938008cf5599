"""Deformable feature alignment with residually refined offsets.

An offset generator proposes a first offset field from the reference and
target features; each refiner then adds a correction to the previous field.
A single deformable convolution finally resamples the reference features with
the last field.  The ``stacked`` mode is the baseline that chains several
independent deformable convolutions instead.

Offset fields are laid out ``(B, 2*G*K*K, h, w)`` with ``(dy, dx)`` pairs per
kernel tap, taps in row-major order, groups outermost.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ATTENTION_MODES = ("spatial", "channel", "none")
OFFSET_MODES = ("refined", "stacked")


@dataclass
class AlignConfig:
    n_refiners: int = 3
    kernel_size: int = 3
    dilation_rates: tuple = (1, 2, 5)
    offset_clamp: float | None = 16.0
    attention: str = "spatial"
    offset_mode: str = "refined"
    generator_blocks: int = 1
    blocks_per_refiner: int = 2
    stacked_layers: int = 3
    deform_groups: int = 1
    refiner_context: str = "warped"

    def __post_init__(self):
        self.dilation_rates = tuple(int(d) for d in self.dilation_rates)
        if self.n_refiners < 0:
            raise ValueError("n_refiners must be >= 0")
        if not self.dilation_rates or min(self.dilation_rates) < 1:
            raise ValueError("dilation_rates must be a non-empty list of positive ints")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")
        if self.offset_mode not in OFFSET_MODES:
            raise ValueError(f"offset_mode must be one of {OFFSET_MODES}")
        if self.refiner_context not in ("warped", "raw"):
            raise ValueError("refiner_context must be 'warped' or 'raw'")

    def offset_channels(self) -> int:
        return 2 * self.deform_groups * self.kernel_size**2


def conv(cin: int, cout: int, k: int = 3, dilation: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, padding=dilation * (k // 2), dilation=dilation,
                     padding_mode="replicate")


def lrelu(x):
    return F.leaky_relu(x, 0.1)


# ---------------------------------------------------------------------------
# deformable sampling
# ---------------------------------------------------------------------------

def _tap_grid(k: int, dilation: int, device, dtype):
    r = (torch.arange(k, device=device, dtype=dtype) - k // 2) * dilation
    ky, kx = torch.meshgrid(r, r, indexing="ij")
    return ky.reshape(-1), kx.reshape(-1)


def deform_im2col(feat: torch.Tensor, offsets: torch.Tensor, k: int,
                  dilation: int = 1, groups: int = 1) -> torch.Tensor:
    """Bilinearly sample ``feat`` at every displaced tap location.

    Returns ``(B, C, K*K, h, w)``.  Coordinates outside the map are clamped to
    the border (replicate padding).
    """
    b, c, h, w = feat.shape
    kk = k * k
    if offsets.shape != (b, 2 * groups * kk, h, w):
        raise ValueError(
            f"offset field {tuple(offsets.shape)} does not match "
            f"{(b, 2 * groups * kk, h, w)} for K={k}, groups={groups}"
        )
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    off = offsets.view(b, groups, kk, 2, h, w)
    ky, kx = _tap_grid(k, dilation, feat.device, offsets.dtype)
    gy = torch.arange(h, device=feat.device, dtype=offsets.dtype).view(1, 1, 1, h, 1)
    gx = torch.arange(w, device=feat.device, dtype=offsets.dtype).view(1, 1, 1, 1, w)
    py = gy + ky.view(1, 1, kk, 1, 1) + off[:, :, :, 0]
    px = gx + kx.view(1, 1, kk, 1, 1) + off[:, :, :, 1]

    y0 = torch.floor(py).detach()
    x0 = torch.floor(px).detach()
    wy = (py - y0).unsqueeze(2)
    wx = (px - x0).unsqueeze(2)
    y0 = y0.long()
    x0 = x0.long()
    y0c, y1c = y0.clamp(0, h - 1), (y0 + 1).clamp(0, h - 1)
    x0c, x1c = x0.clamp(0, w - 1), (x0 + 1).clamp(0, w - 1)

    src = feat.reshape(b, groups, c // groups, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).view(b, groups, 1, kk * h * w)
        idx = idx.expand(b, groups, c // groups, kk * h * w)
        return torch.gather(src, 3, idx).view(b, groups, c // groups, kk, h, w)

    out = (gather(y0c, x0c) * ((1 - wy) * (1 - wx))
           + gather(y0c, x1c) * ((1 - wy) * wx)
           + gather(y1c, x0c) * (wy * (1 - wx))
           + gather(y1c, x1c) * (wy * wx))
    return out.reshape(b, c, kk, h, w)


def deform_sample(feat: torch.Tensor, offsets: torch.Tensor, weight: torch.Tensor,
                  bias: torch.Tensor | None = None, dilation: int = 1,
                  groups: int = 1) -> torch.Tensor:
    """Deformable convolution: sample displaced taps, then apply ``weight``.

    ``feat`` is ``(B, C, h, w)`` or ``(C, h, w)``; ``weight`` is ``(O, C, K, K)``.
    With an all-zero offset field this is a stride-1 'same' convolution with
    replicate padding.
    """
    unbatched = feat.dim() == 3
    if unbatched:
        feat, offsets = feat.unsqueeze(0), offsets.unsqueeze(0)
    o, ci, k, k2 = weight.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if ci != feat.shape[1]:
        raise ValueError(f"weight expects {ci} input channels, feature map has {feat.shape[1]}")
    cols = deform_im2col(feat, offsets, k, dilation, groups)
    out = torch.einsum("bckhw,ock->bohw", cols, weight.reshape(o, ci, k * k))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out[0] if unbatched else out


def warp(feat: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp by a dense ``(B, 2, h, w)`` (dy, dx) field."""
    return deform_im2col(feat, flow, 1)[:, :, 0]


class DeformConv(nn.Module):
    """Deformable convolution whose weights start as the identity (Dirac) map."""

    def __init__(self, channels: int, kernel_size: int = 3, groups: int = 1):
        super().__init__()
        self.kernel_size = kernel_size
        self.groups = groups
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(channels))
        nn.init.dirac_(self.weight)

    def forward(self, feat, offsets):
        return deform_sample(feat, offsets, self.weight, self.bias, groups=self.groups)


# ---------------------------------------------------------------------------
# Incep-HDC and attention
# ---------------------------------------------------------------------------

class SpatialAttention(nn.Module):
    """Channel mean/max pooling -> two 3x3 convs -> sigmoid gate ``(B, 1, h, w)``."""

    def __init__(self, hidden: int = 4):
        super().__init__()
        self.conv1 = conv(2, hidden)
        self.conv2 = conv(hidden, 1)

    def forward(self, feat):
        pooled = torch.cat([feat.mean(1, keepdim=True), feat.amax(1, keepdim=True)], 1)
        return torch.sigmoid(self.conv2(F.relu(self.conv1(pooled))))


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate ``(B, C, 1, 1)``; ablation only."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, feat):
        return torch.sigmoid(self.fc2(F.relu(self.fc1(feat.mean((2, 3), keepdim=True)))))


class IncepHDC(nn.Module):
    """Parallel hybrid-dilated branches, 1x1 fusion, attention gate, identity skip.

    Branch ``i`` is a chain of 3x3 convolutions with dilations
    ``rates[0], ..., rates[i]``, so the widest branch covers
    ``1 + 2 * sum(rates)`` pixels without gridding holes.
    """

    def __init__(self, channels: int, rates=(1, 2, 5), attention: str = "spatial"):
        super().__init__()
        self.channels = channels
        self.branches = nn.ModuleList(
            nn.ModuleList(conv(channels, channels, 3, d) for d in rates[: i + 1])
            for i in range(len(rates))
        )
        self.fuse = nn.Conv2d(channels * len(rates), channels, 1)
        if attention == "spatial":
            self.attention = SpatialAttention()
        elif attention == "channel":
            self.attention = ChannelAttention(channels)
        else:
            self.attention = None

    def features(self, x):
        outs = []
        for chain in self.branches:
            h = x
            for layer in chain:
                h = lrelu(layer(h))
            outs.append(h)
        return self.fuse(torch.cat(outs, 1))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"Incep-HDC built for {self.channels} channels, got {x.shape[1]}")
        y = self.features(x)
        if self.attention is not None:
            y = y * self.attention(y)
        return x + y


# ---------------------------------------------------------------------------
# offset generator / refiner
# ---------------------------------------------------------------------------

def _zero_conv(cin: int, cout: int) -> nn.Conv2d:
    layer = conv(cin, cout)
    nn.init.zeros_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


class OffsetGenerator(nn.Module):
    """First offset field from concatenated reference/target features."""

    def __init__(self, channels: int, cfg: AlignConfig, in_channels: int | None = None):
        super().__init__()
        self.head = conv(in_channels or 2 * channels, channels)
        self.blocks = nn.Sequential(
            *[IncepHDC(channels, cfg.dilation_rates, cfg.attention)
              for _ in range(cfg.generator_blocks)]
        )
        self.proj = _zero_conv(channels, cfg.offset_channels())

    def forward(self, f_ref, f_lq):
        if f_ref.shape != f_lq.shape:
            raise ValueError(f"feature shapes differ: {tuple(f_ref.shape)} vs {tuple(f_lq.shape)}")
        return self.proj(self.blocks(lrelu(self.head(torch.cat([f_ref, f_lq], 1)))))


class OffsetRefiner(nn.Module):
    """Residual offset update ``o + R(o, context)``; identity when freshly built."""

    def __init__(self, channels: int, cfg: AlignConfig):
        super().__init__()
        self.cfg = cfg
        oc = cfg.offset_channels()
        self.head = conv(oc + 2 * channels, channels)
        self.blocks = nn.Sequential(
            *[IncepHDC(channels, cfg.dilation_rates, cfg.attention)
              for _ in range(cfg.blocks_per_refiner)]
        )
        self.proj = _zero_conv(channels, oc)

    def context(self, o_prev, f_ref):
        if self.cfg.refiner_context == "raw":
            return f_ref
        k = self.cfg.kernel_size
        b, _, h, w = o_prev.shape
        centre = o_prev.view(b, self.cfg.deform_groups, k * k, 2, h, w)[:, 0, (k * k) // 2]
        return warp(f_ref, _clamp(centre, self.cfg.offset_clamp))

    def residual(self, o_prev, f_ref, f_lq):
        x = torch.cat([o_prev, self.context(o_prev, f_ref), f_lq], 1)
        return self.proj(self.blocks(lrelu(self.head(x))))

    def forward(self, o_prev, f_ref, f_lq):
        if o_prev.shape[1] != self.cfg.offset_channels() or o_prev.shape[2:] != f_ref.shape[2:]:
            raise ValueError(f"offset field {tuple(o_prev.shape)} inconsistent with features")
        return o_prev + self.residual(o_prev, f_ref, f_lq)


def _clamp(o, limit):
    return o if limit is None else o.clamp(-limit, limit)


class RefinedAlign(nn.Module):
    """Generator + ``n_refiners`` residual refiners + one deformable conv."""

    def __init__(self, channels: int, cfg: AlignConfig):
        super().__init__()
        self.cfg = cfg
        self.generator = OffsetGenerator(channels, cfg)
        self.refiners = nn.ModuleList(OffsetRefiner(channels, cfg) for _ in range(cfg.n_refiners))
        self.dconv = DeformConv(channels, cfg.kernel_size, cfg.deform_groups)

    def offsets(self, f_ref, f_lq):
        o = self.generator(f_ref, f_lq)
        for refiner in self.refiners:
            o = refiner(o, f_ref, f_lq)
        return o

    def forward(self, f_ref, f_lq, return_offsets: bool = False):
        o = self.offsets(f_ref, f_lq)
        out = self.dconv(f_ref, _clamp(o, self.cfg.offset_clamp))
        return (out, o) if return_offsets else out


class StackedAlign(nn.Module):
    """Baseline: independent deformable convolutions applied one after another."""

    def __init__(self, channels: int, cfg: AlignConfig):
        super().__init__()
        self.cfg = cfg
        self.generators = nn.ModuleList(
            OffsetGenerator(channels, cfg) for _ in range(cfg.stacked_layers)
        )
        self.dconvs = nn.ModuleList(
            DeformConv(channels, cfg.kernel_size, cfg.deform_groups)
            for _ in range(cfg.stacked_layers)
        )

    def forward(self, f_ref, f_lq, return_offsets: bool = False):
        h = f_ref
        o = None
        for gen, dconv in zip(self.generators, self.dconvs):
            o = gen(h, f_lq)
            h = dconv(h, _clamp(o, self.cfg.offset_clamp))
        return (h, o) if return_offsets else h


def build_aligner(channels: int, cfg: AlignConfig) -> nn.Module:
    if cfg.offset_mode == "stacked":
        return StackedAlign(channels, cfg)
    return RefinedAlign(channels, cfg)


def align(f_ref, f_lq, aligner: nn.Module):
    """Align reference features toward ``f_lq``; accepts unbatched ``(C, h, w)`` maps."""
    if f_ref.shape[-2:] != f_lq.shape[-2:]:
        raise ValueError(f"spatial dims differ: {tuple(f_ref.shape)} vs {tuple(f_lq.shape)}")
    if f_ref.dim() == 3:
        return aligner(f_ref.unsqueeze(0), f_lq.unsqueeze(0))[0]
    return aligner(f_ref, f_lq)
