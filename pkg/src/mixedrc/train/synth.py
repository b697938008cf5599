"""Synthetic training triplets: ground truth, degraded LR window, intra reference."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .. import imgops
from ..chain.toycodec import toy_quantize
from .scenes import MotionSpec, Scene

REF_QP = 28


@dataclass
class Sample:
    gt_clip: np.ndarray     # (2N+1, C, H, W)
    lr_clip: np.ndarray     # (2N+1, C, H/r, W/r)
    ref_frame: np.ndarray   # (C, H, W)
    d: int
    seed: int

    @property
    def gt(self) -> np.ndarray:
        return self.gt_clip[len(self.gt_clip) // 2]


def degrade(clip: np.ndarray, r: int, qp: int) -> np.ndarray:
    """Bicubic 1/r down-scaling followed by toy intra coding at ``qp``."""
    lr = imgops.bicubic_resize(np.asarray(clip, dtype=np.float32), Fraction(1, r))
    return toy_quantize(lr, qp)


def sample_d(rng: np.random.Generator, d_max: int) -> int:
    """Uniform over ``{-d_max..-1, 1..d_max}``; 0 when ``d_max`` is 0."""
    if d_max <= 0:
        return 0
    k = int(rng.integers(1, d_max + 1))
    return k if rng.random() < 0.5 else -k


def make_sample(seed: int, size: int, r: int, qp: int, radius: int, d: int | None = None,
                d_max: int = 8, channels: int = 1, motion: MotionSpec = MotionSpec(),
                ref_qp: int = REF_QP) -> Sample:
    """One deterministic triplet; ``d`` is drawn from ``d_max`` unless given."""
    if size % r:
        raise ValueError(f"patch size {size} is not divisible by scale {r}")
    rng = np.random.default_rng(seed)
    scene = Scene(rng, size, size, channels, motion)
    t0 = float(rng.uniform(0, 64))
    if d is None:
        d = sample_d(rng, d_max)
    gt = scene.clip(2 * radius + 1, start=t0 - radius)
    ref = toy_quantize(scene.render(t0 + d), ref_qp)
    return Sample(gt, degrade(gt, r, qp), ref, d, seed)


def synth_dataset(n_clips: int, size: int = 64, r: int = 2, qp: int = 37, radius: int = 1,
                  seed: int = 0, d_max: int = 8, channels: int = 1,
                  motion: MotionSpec = MotionSpec(), gop_protocol: bool = False):
    """Yield ``n_clips`` samples.

    With ``gop_protocol`` the reference is the key-frame opening a 16-frame
    GOP, i.e. ``d = -k`` for the target's position ``k`` in the GOP.
    """
    ss = np.random.SeedSequence(seed)
    for i, child in enumerate(ss.spawn(n_clips)):
        s = int(child.generate_state(1)[0])
        d = -(i % 16) if gop_protocol else None
        yield make_sample(s, size, r, qp, radius, d, d_max, channels, motion)


def synth_clip(n_frames: int, size: int = 64, channels: int = 1, seed: int = 0,
               motion: MotionSpec = MotionSpec()) -> np.ndarray:
    """A full ``(T, C, size, size)`` source clip for end-to-end chain runs."""
    scene = Scene(np.random.default_rng(seed), size, size, channels, motion)
    return scene.clip(n_frames)


def collate(samples) -> dict:
    return {
        "gt": np.stack([s.gt for s in samples]),
        "lr": np.stack([s.lr_clip for s in samples]),
        "ref": np.stack([s.ref_frame for s in samples]),
        "d": np.array([s.d for s in samples]),
        "seeds": [s.seed for s in samples],
    }
