"""Procedural moving scenes used as stand-in video content.

A scene is a continuous image (band-limited gratings plus anti-aliased discs
and boxes) moving rigidly over time, so any frame at any resolution can be
rendered exactly without generating its neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MotionSpec:
    max_speed: float = 0.75      # HR pixels per frame
    max_rotation: float = 0.002  # radians per frame
    n_waves: int = 10
    n_shapes: int = 14
    max_freq: float = 0.3        # cycles per HR pixel


class Scene:
    """Random textured content with constant translation + rotation."""

    def __init__(self, rng: np.random.Generator, height: int, width: int,
                 channels: int = 1, motion: MotionSpec = MotionSpec()):
        self.height, self.width, self.channels = height, width, channels
        self.motion = motion
        speed = rng.uniform(0.3, 1.0) * motion.max_speed
        angle = rng.uniform(0, 2 * np.pi)
        self.velocity = np.array([speed * np.sin(angle), speed * np.cos(angle)])
        self.omega = rng.uniform(-1, 1) * motion.max_rotation
        self.centre = np.array([height / 2, width / 2])

        freq = rng.uniform(0.01, motion.max_freq, motion.n_waves)
        theta = rng.uniform(0, np.pi, motion.n_waves)
        self.k = np.stack([freq * np.sin(theta), freq * np.cos(theta)], 1) * 2 * np.pi
        self.wave_amp = rng.uniform(0.02, 0.09, motion.n_waves) / (1 + 4 * freq)
        self.wave_phase = rng.uniform(0, 2 * np.pi, motion.n_waves)

        # shapes live on a canvas larger than the frame so motion keeps revealing them
        span = 3.0 * max(height, width)
        self.shape_pos = rng.uniform(-span / 2, span / 2, (motion.n_shapes, 2)) + self.centre
        self.shape_size = rng.uniform(2.0, 0.2 * max(height, width) + 3, motion.n_shapes)
        self.shape_kind = rng.integers(0, 2, motion.n_shapes)
        self.shape_level = rng.uniform(0.1, 0.9, motion.n_shapes)
        self.base = rng.uniform(0.35, 0.65)
        self.tint = rng.uniform(0.7, 1.3, (channels, 1, 1)) if channels > 1 else np.ones((1, 1, 1))

    def render(self, t: float, scale: float = 1.0) -> np.ndarray:
        """Frame at time ``t`` sampled on a grid ``scale`` times the scene size."""
        h, w = round(self.height * scale), round(self.width * scale)
        yy, xx = np.meshgrid((np.arange(h) + 0.5) / scale, (np.arange(w) + 0.5) / scale,
                             indexing="ij")
        # scene coordinates: undo rotation about the centre, then translation
        c, s = np.cos(-self.omega * t), np.sin(-self.omega * t)
        dy, dx = yy - self.centre[0], xx - self.centre[1]
        sy = c * dy - s * dx + self.centre[0] - self.velocity[0] * t
        sx = s * dy + c * dx + self.centre[1] - self.velocity[1] * t

        img = np.full((h, w), self.base)
        for (ky, kx), amp, ph in zip(self.k, self.wave_amp, self.wave_phase):
            img += amp * np.sin(ky * sy + kx * sx + ph)
        aa = 0.5 / scale
        for (py, px), size, kind, level in zip(self.shape_pos, self.shape_size,
                                               self.shape_kind, self.shape_level):
            if kind == 0:
                dist = np.hypot(sy - py, sx - px) - size
            else:
                dist = np.maximum(np.abs(sy - py), np.abs(sx - px)) - size
            cover = np.clip(0.5 - dist / (2 * aa), 0.0, 1.0)
            img = img * (1 - 0.8 * cover) + 0.8 * level * cover
        out = np.clip(img[None] * self.tint, 0.0, 1.0)
        return out.astype(np.float32)

    def clip(self, n_frames: int, start: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return np.stack([self.render(start + i, scale) for i in range(n_frames)])
