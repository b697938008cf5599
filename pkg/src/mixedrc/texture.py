"""Texture/artifact analysis map and the disentangled loss built on it.

The analysis map labels every high-resolution pixel by comparing two
residuals against the bicubic upsample ``x_up`` of the low-resolution input:

* ``r_lp = lowpass(x_up) - x_up``, what smoothing would do to the pixel;
* ``r_y  = y - x_up``, how the candidate image actually departs from it.

``sgn(r_y * r_lp)`` is +1 where the departure points the same way smoothing
would (a low-pass-correctable deviation, i.e. an artifact), -1 where it points
the other way (texture), and 0 on flat pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import imgops

ARTIFACT, FLAT, TEXTURE = 1, 0, -1


@dataclass(frozen=True)
class LossConfig:
    p: int = 1
    lambda_distan: float = 0.1
    surrogate_k: float = 2000.0
    flat_threshold: float = 1e-6
    scale: int = 2
    sigma: float = imgops.LOWPASS_SIGMA
    ksize: int = imgops.LOWPASS_KSIZE
    luma_only: bool = True

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if self.surrogate_k <= 0:
            raise ValueError("surrogate_k must be positive")
        if self.lambda_distan < 0 or self.flat_threshold < 0:
            raise ValueError("lambda_distan and flat_threshold must be non-negative")


def _as_tensor(a):
    if isinstance(a, torch.Tensor):
        return a
    arr = np.asarray(a)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr))


def _check_scale(y, x, cfg: LossConfig) -> None:
    if x.ndim < 3 or y.ndim < 3:
        raise ValueError("frames must be (..., C, H, W)")
    h, w = x.shape[-2:]
    if tuple(y.shape[-2:]) != (h * cfg.scale, w * cfg.scale):
        raise ValueError(
            f"HR frame {tuple(y.shape[-2:])} is not {cfg.scale}x the LR frame {(h, w)}"
        )
    if y.shape[-3] != x.shape[-3]:
        raise ValueError(f"channel mismatch: {y.shape[-3]} vs {x.shape[-3]}")


def _prep(x, cfg: LossConfig):
    return imgops.to_luma(x) if cfg.luma_only and x.shape[-3] == 3 else x


def lowpass_residual(x, cfg: LossConfig = LossConfig()):
    """Return ``(x_up, r_lp)`` for an LR frame; neither carries gradient."""
    x = _prep(_as_tensor(x), cfg).detach()
    x_up = imgops.bicubic_resize(x, cfg.scale)
    r_lp = imgops.gaussian_lowpass(x_up, cfg.sigma, cfg.ksize) - x_up
    return x_up, r_lp


def hard_sign(v: torch.Tensor, eps: float) -> torch.Tensor:
    s = torch.sign(v)
    return torch.where(v.abs() <= eps, torch.zeros_like(s), s)


def sign_map_from_residuals(r_y, r_lp, eps: float = 1e-6) -> torch.Tensor:
    return hard_sign(_as_tensor(r_y) * _as_tensor(r_lp), eps)


def analysis_map(y, x, cfg: LossConfig = LossConfig()):
    """Per-pixel artifact (+1) / flat (0) / texture (-1) labels of ``y``.

    Returns an int8 array (or tensor, matching ``y``) with the spatial size of
    ``y``; a single channel in luma mode.
    """
    was_np = not isinstance(y, torch.Tensor)
    yt, xt = _as_tensor(y), _as_tensor(x)
    _check_scale(yt, xt, cfg)
    x_up, r_lp = lowpass_residual(xt, cfg)
    r_y = _prep(yt, cfg).detach().to(x_up.dtype) - x_up
    d = hard_sign(r_y * r_lp, cfg.flat_threshold).to(torch.int8)
    return d.numpy() if was_np else d


def _norm(diff: torch.Tensor, p: int) -> torch.Tensor:
    if p == 1:
        return diff.abs().mean()
    return diff.pow(2).mean().sqrt()


def disentangled_loss(x, y_hat, y, cfg: LossConfig = LossConfig()) -> float:
    """Pixel-averaged ``l_p`` distance between the analysis maps of ``y`` and ``y_hat``."""
    yt, yh = _as_tensor(y), _as_tensor(y_hat)
    if yt.shape != yh.shape:
        raise ValueError(f"shape mismatch: {tuple(yh.shape)} vs {tuple(yt.shape)}")
    d_gt = analysis_map(yt, x, cfg).to(torch.float64)
    d_pred = analysis_map(yh, x, cfg).to(torch.float64)
    return float(_norm(d_gt - d_pred, cfg.p))


def soft_disentangled_loss(x, y_hat, y, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Differentiable stand-in for :func:`disentangled_loss`.

    The prediction branch uses ``tanh(k * r_yhat * r_lp)`` in place of the sign;
    the ground-truth branch keeps the hard sign.  Gradients flow to ``y_hat``.
    """
    yt, yh = _as_tensor(y), _as_tensor(y_hat)
    if yt.shape != yh.shape:
        raise ValueError(f"shape mismatch: {tuple(yh.shape)} vs {tuple(yt.shape)}")
    xt = _as_tensor(x)
    _check_scale(yt, xt, cfg)
    x_up, r_lp = lowpass_residual(xt, cfg)
    x_up, r_lp = x_up.to(yh.dtype), r_lp.to(yh.dtype)
    d_gt = hard_sign((_prep(yt, cfg).detach().to(yh.dtype) - x_up) * r_lp, cfg.flat_threshold)
    d_soft = torch.tanh(cfg.surrogate_k * (_prep(yh, cfg) - x_up) * r_lp)
    return _norm(d_gt - d_soft, cfg.p)


def sign_disagreements(x, y_hat, y, cfg: LossConfig = LossConfig()) -> int:
    """Number of pixels whose analysis label differs between ``y_hat`` and ``y``."""
    a = analysis_map(_as_tensor(y), x, cfg)
    b = analysis_map(_as_tensor(y_hat), x, cfg)
    return int((a != b).sum())


def render_map(d) -> np.ndarray:
    """RGB uint8 visualisation: artifact black, texture green, flat gray."""
    d = np.asarray(d.numpy() if isinstance(d, torch.Tensor) else d)
    if d.ndim == 3:
        d = d[0]
    rgb = np.full(d.shape + (3,), 128, dtype=np.uint8)
    rgb[d == ARTIFACT] = (0, 0, 0)
    rgb[d == TEXTURE] = (0, 200, 0)
    return rgb
