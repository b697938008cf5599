"""Deterministic image primitives shared by the whole package.

Every function accepts either a ``numpy.ndarray`` or a ``torch.Tensor`` laid
out as ``(..., C, H, W)`` and returns the same kind of object.  Values live in
``[0, 1]``; float32 is the working precision unless the caller passes float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np
import torch
import torch.nn.functional as F

BICUBIC_A = -0.5
LOWPASS_SIGMA = 1.5
LOWPASS_KSIZE = 5


def _to_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)), True


def _back(t: torch.Tensor, was_numpy: bool):
    if was_numpy:
        return t.detach().cpu().numpy()
    return t


def _check_chw(x) -> None:
    if x.ndim < 3:
        raise ValueError(f"expected a (..., C, H, W) array, got shape {tuple(x.shape)}")


# ---------------------------------------------------------------------------
# scale-space conversion
# ---------------------------------------------------------------------------

def down_shuffle(x, r: int):
    """Rearrange each ``r x r`` spatial block into ``r**2`` channels.

    Output channel ``c*r*r + dy*r + dx`` at ``(i, j)`` holds input channel
    ``c`` at ``(i*r + dy, j*r + dx)``.
    """
    if r <= 0:
        raise ValueError(f"scale must be a positive integer, got {r}")
    _check_chw(x)
    *lead, c, h, w = x.shape
    if h % r:
        raise ValueError(f"height {h} is not divisible by scale {r}")
    if w % r:
        raise ValueError(f"width {w} is not divisible by scale {r}")
    n = len(lead)
    y = x.reshape(*lead, c, h // r, r, w // r, r)
    perm = tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3)
    y = y.permute(*perm) if isinstance(y, torch.Tensor) else y.transpose(perm)
    return y.reshape(*lead, c * r * r, h // r, w // r)


def up_shuffle(x, r: int):
    """Inverse of :func:`down_shuffle` (sub-pixel / pixel-shuffle upsampling)."""
    if r <= 0:
        raise ValueError(f"scale must be a positive integer, got {r}")
    _check_chw(x)
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} is not divisible by scale**2 = {r * r}")
    n = len(lead)
    y = x.reshape(*lead, c // (r * r), r, r, h, w)
    perm = tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2)
    y = y.permute(*perm) if isinstance(y, torch.Tensor) else y.transpose(perm)
    return y.reshape(*lead, c // (r * r), h * r, w * r)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def cubic_kernel(t, a: float = BICUBIC_A):
    """Keys cubic-convolution kernel evaluated at offsets ``t``."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int, scale: Fraction, a: float) -> np.ndarray:
    # half-pixel centres, edge replication by index clamping, no antialiasing
    m = np.zeros((n_out, n_in), dtype=np.float64)
    inv = 1.0 / float(scale)
    for o in range(n_out):
        src = (o + 0.5) * inv - 0.5
        base = math.floor(src)
        for k in range(base - 1, base + 3):
            wgt = float(cubic_kernel(src - k, a))
            if wgt != 0.0:
                m[o, min(max(k, 0), n_in - 1)] += wgt
    m.setflags(write=False)
    return m


def resize_matrix(n_in: int, n_out: int, scale, a: float = BICUBIC_A) -> np.ndarray:
    """The ``(n_out, n_in)`` linear map applied along one axis by bicubic_resize."""
    return _resize_matrix(n_in, n_out, Fraction(scale).limit_denominator(10_000), a)


def bicubic_resize(x, scale, a: float = BICUBIC_A, clamp: bool = True):
    """Separable cubic-convolution resize by a rational ``scale``.

    Output size is ``round(H*scale) x round(W*scale)``.  Borders replicate the
    edge pixel; the result is clamped to ``[0, 1]`` unless ``clamp=False``.
    """
    _check_chw(x)
    scale = Fraction(scale).limit_denominator(10_000)
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    t, was_np = _to_tensor(x)
    h, w = t.shape[-2:]
    oh, ow = round(h * scale), round(w * scale)
    if oh < 1 or ow < 1:
        raise ValueError(f"resize of {h}x{w} by {scale} gives an empty frame")
    mh = torch.tensor(_resize_matrix(h, oh, scale, a), dtype=t.dtype, device=t.device)
    mw = torch.tensor(_resize_matrix(w, ow, scale, a), dtype=t.dtype, device=t.device)
    out = torch.matmul(torch.matmul(mh, t), mw.T)
    if clamp:
        out = out.clamp(0.0, 1.0)
    return _back(out, was_np)


# ---------------------------------------------------------------------------
# low-pass filtering
# ---------------------------------------------------------------------------

def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    half = ksize // 2
    g = np.exp(-(np.arange(-half, half + 1, dtype=np.float64) ** 2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_kernel2d(sigma: float = LOWPASS_SIGMA, ksize: int = LOWPASS_KSIZE) -> np.ndarray:
    g = gaussian_kernel1d(sigma, ksize)
    return np.outer(g, g)


def gaussian_lowpass(x, sigma: float = LOWPASS_SIGMA, ksize: int = LOWPASS_KSIZE):
    """Depthwise normalised Gaussian blur with replicate padding."""
    if ksize % 2 == 0 or ksize < 3:
        raise ValueError(f"ksize must be odd and >= 3, got {ksize}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _check_chw(x)
    t, was_np = _to_tensor(x)
    *lead, c, h, w = t.shape
    flat = t.reshape(-1, 1, h, w)
    g = torch.as_tensor(gaussian_kernel1d(sigma, ksize), dtype=t.dtype, device=t.device)
    p = ksize // 2
    flat = F.pad(flat, (p, p, p, p), mode="replicate")
    flat = F.conv2d(flat, g.view(1, 1, 1, ksize))
    flat = F.conv2d(flat, g.view(1, 1, ksize, 1))
    return _back(flat.reshape(*lead, c, h, w), was_np)


# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Crop:
    height: int
    width: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def empty(self) -> bool:
        return self.pad_bottom == 0 and self.pad_right == 0


def pad_to_multiple(x, r: int):
    """Replicate-pad bottom/right so H and W are multiples of ``r``.

    Returns ``(padded, crop)``; ``crop_to(padded, crop)`` restores the input.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    _check_chw(x)
    h, w = x.shape[-2:]
    pb, pr = (-h) % r, (-w) % r
    crop = Crop(h, w, pb, pr)
    if crop.empty:
        return x, crop
    t, was_np = _to_tensor(x)
    lead = t.shape[:-3]
    flat = t.reshape(-1, *t.shape[-3:])
    flat = F.pad(flat, (0, pr, 0, pb), mode="replicate")
    return _back(flat.reshape(*lead, *flat.shape[-3:]), was_np), crop


def crop_to(x, crop: Crop):
    return x[..., : crop.height, : crop.width]


def to_luma(x):
    """BT.601 luma of a 3-channel frame; single-channel frames pass through."""
    c = x.shape[-3]
    if c == 1:
        return x
    if c != 3:
        raise ValueError(f"luma needs 1 or 3 channels, got {c}")
    y = 0.299 * x[..., 0:1, :, :] + 0.587 * x[..., 1:2, :, :] + 0.114 * x[..., 2:3, :, :]
    return y


def to_float(frame_u8: np.ndarray) -> np.ndarray:
    return frame_u8.astype(np.float32) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
