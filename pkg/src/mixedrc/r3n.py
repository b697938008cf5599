"""Reference-based restoration network with refined-offset alignment.

Pipeline for one output frame: down-shuffle the HR reference to LR scale,
extract features from it and from every LR frame, align the reference and the
neighbouring frames to the centre frame, fuse, reconstruct, pixel-shuffle up
and add the bicubic upsample of the centre frame.
"""
from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import imgops
from .align import AlignConfig, build_aligner, conv

CHECKPOINT_MAGIC = b"R3N1"
_DTYPE_F32 = 0


@dataclass
class R3NConfig:
    scale: int = 2
    temporal_radius: int = 1
    channels: int = 1
    feat_channels: int = 32
    n_resgroups_extract: int = 2
    n_resgroups_reconstruct: int = 2
    blocks_per_group: int = 4
    share_extractor: bool = True
    align: AlignConfig = field(default_factory=AlignConfig)

    def __post_init__(self):
        if isinstance(self.align, dict):
            self.align = AlignConfig(**self.align)
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.temporal_radius < 0:
            raise ValueError("temporal_radius must be >= 0")

    @property
    def n_frames(self) -> int:
        return 2 * self.temporal_radius + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "R3NConfig":
        d = dict(d)
        d["align"] = AlignConfig(**d.get("align", {}))
        return cls(**d)


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = conv(ch, ch)
        self.conv2 = conv(ch, ch)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class ResGroup(nn.Module):
    """Residual blocks followed by a conv, wrapped in a group-level skip."""

    def __init__(self, ch: int, n_blocks: int):
        super().__init__()
        self.body = nn.Sequential(*[ResBlock(ch) for _ in range(n_blocks)], conv(ch, ch))

    def forward(self, x):
        return x + self.body(x)


def _groups(ch: int, n: int, per: int) -> nn.Sequential:
    return nn.Sequential(*[ResGroup(ch, per) for _ in range(n)])


class R3N(nn.Module):
    def __init__(self, cfg: R3NConfig):
        super().__init__()
        self.cfg = cfg
        c, f, r = cfg.channels, cfg.feat_channels, cfg.scale
        self.head_lr = conv(c, f)
        self.head_ref = conv(c * r * r, f)
        self.extract = _groups(f, cfg.n_resgroups_extract, cfg.blocks_per_group)
        self.extract_ref = (None if cfg.share_extractor
                            else _groups(f, cfg.n_resgroups_extract, cfg.blocks_per_group))
        self.align_ref = build_aligner(f, cfg.align)
        self.align_nbr = build_aligner(f, cfg.align) if cfg.temporal_radius > 0 else None
        self.fuse = nn.Conv2d(f * (cfg.n_frames + 1), f, 1)
        self.reconstruct = _groups(f, cfg.n_resgroups_reconstruct, cfg.blocks_per_group)
        self.tail = conv(f, c * r * r)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def features(self, lr: torch.Tensor, ref: torch.Tensor):
        b, t, c, h, w = lr.shape
        f_lr = self.extract(torch.nn.functional.leaky_relu(
            self.head_lr(lr.reshape(b * t, c, h, w)), 0.1))
        ref_ds = imgops.down_shuffle(ref, self.cfg.scale)
        extract_ref = self.extract_ref or self.extract
        f_ref = extract_ref(torch.nn.functional.leaky_relu(self.head_ref(ref_ds), 0.1))
        return f_lr.view(b, t, -1, h, w), f_ref

    def forward(self, lr: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        """``lr``: ``(B, 2N+1, C, h, w)``, ``ref``: ``(B, C, r*h, r*w)`` -> ``(B, C, r*h, r*w)``."""
        unbatched = lr.dim() == 4
        if unbatched:
            lr, ref = lr.unsqueeze(0), ref.unsqueeze(0)
        cfg = self.cfg
        b, t, c, h, w = lr.shape
        if t != cfg.n_frames:
            raise ValueError(f"expected {cfg.n_frames} LR frames, got {t}")
        if tuple(ref.shape[-2:]) != (h * cfg.scale, w * cfg.scale):
            raise ValueError(
                f"reference {tuple(ref.shape[-2:])} is not {cfg.scale}x the LR size {(h, w)}"
            )
        f_lr, f_ref = self.features(lr, ref)
        centre = cfg.temporal_radius
        f_c = f_lr[:, centre]
        parts = [f_c, self.align_ref(f_ref, f_c)]
        for i in range(t):
            if i != centre:
                parts.append(self.align_nbr(f_lr[:, i], f_c))
        x = self.fuse(torch.cat(parts, 1))
        x = self.reconstruct(x)
        residual = imgops.up_shuffle(self.tail(x), cfg.scale)
        base = imgops.bicubic_resize(lr[:, centre], cfg.scale)
        out = (base + residual).clamp(0.0, 1.0)
        return out[0] if unbatched else out

    @torch.no_grad()
    def restore(self, lr, ref) -> np.ndarray:
        """Numpy-in, numpy-out inference for one window."""
        dtype = next(self.parameters()).dtype
        out = self(torch.as_tensor(np.asarray(lr), dtype=dtype),
                   torch.as_tensor(np.asarray(ref), dtype=dtype))
        return out.numpy().astype(np.float32)


def init_params(cfg: R3NConfig, seed: int = 0) -> R3N:
    """Build a model with deterministic weights for ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = R3N(cfg)
    model.seed = seed
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(model: R3N, path, extra: dict | None = None) -> None:
    """Write ``R3N1`` | u32 json_len | json | tensors until EOF.

    Each tensor is ``u16 name_len | name | u8 dtype | u8 ndim | u32 dims... |
    raw little-endian float32``.
    """
    meta = {"config": model.cfg.to_dict(), "seed": getattr(model, "seed", None)}
    if extra:
        meta["extra"] = extra
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(data: bytes, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data[pos:pos + n], pos + n


def load_checkpoint(path) -> tuple[R3N, R3NConfig]:
    data = Path(path).read_bytes()
    magic, pos = _read(data, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    raw, pos = _read(data, pos, 4, "config length")
    (n,) = struct.unpack("<I", raw)
    raw, pos = _read(data, pos, n, "config")
    try:
        meta = json.loads(raw.decode("utf-8"))
        cfg = R3NConfig.from_dict(meta["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt config block ({exc})") from exc
    state = {}
    while pos < len(data):
        raw, pos = _read(data, pos, 2, "name length")
        (ln,) = struct.unpack("<H", raw)
        raw, pos = _read(data, pos, ln, "tensor name")
        name = raw.decode("utf-8")
        raw, pos = _read(data, pos, 2, f"{name} header")
        dtype, ndim = struct.unpack("<BB", raw)
        if dtype != _DTYPE_F32:
            raise CheckpointError(f"{path}: unsupported dtype code {dtype} for {name}")
        raw, pos = _read(data, pos, 4 * ndim, f"{name} shape")
        shape = struct.unpack(f"<{ndim}I", raw)
        count = int(np.prod(shape, dtype=np.int64))
        raw, pos = _read(data, pos, 4 * count, f"{name} data")
        state[name] = torch.from_numpy(np.frombuffer(raw, "<f4").reshape(shape).copy())
    model = R3N(cfg)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: tensors do not match config ({exc})") from exc
    model.seed = meta.get("seed")
    model.extra = meta.get("extra", {})
    return model, cfg
