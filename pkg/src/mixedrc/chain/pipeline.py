"""Mixed-resolution coding chain: encode, decode, decoder-side restoration."""
from __future__ import annotations

import json
import time
from fractions import Fraction

import numpy as np
import torch

from .. import imgops
from .adapters import CodecError, ToyAdapter, adapter_from_params
from .container import GopLayout, MixedStream


def downscale_clip(clip: np.ndarray, r: int) -> np.ndarray:
    return imgops.bicubic_resize(np.asarray(clip, dtype=np.float32), Fraction(1, r))


def encode_mixed(clip_hr, r: int, gop: int = 16, base_qp: int = 37, el_qp: int = 28,
                 adapter=None) -> MixedStream:
    """Encode a ``(T, C, H, W)`` clip as LR base layer + HR intra key-frames.

    The source is replicate-padded to a multiple of ``r``; the container keeps
    the original size so restoration can crop back.
    """
    adapter = adapter or ToyAdapter()
    clip_hr = np.asarray(clip_hr, dtype=np.float32)
    if clip_hr.ndim != 4 or len(clip_hr) == 0:
        raise ValueError(f"expected a non-empty (T, C, H, W) clip, got shape {clip_hr.shape}")
    t, c, h, w = clip_hr.shape
    layout = GopLayout(gop, r, t, w, h)
    padded, _ = imgops.pad_to_multiple(clip_hr, r)
    lr = downscale_clip(padded, r)
    stream = MixedStream(layout, adapter.codec_id,
                         {"base_qp": base_qp, "el_qp": el_qp, "channels": c, **adapter.params()})
    for g in range(layout.gop_count):
        a, b = layout.gop_bounds(g)
        try:
            stream.el.append(adapter.encode(padded[a:a + 1], el_qp))
            stream.bl.append(adapter.encode(lr[a:b], base_qp))
        except CodecError as exc:
            raise CodecError(f"GOP {g}: {exc}") from exc
    return stream


def decode_mixed(stream: MixedStream | bytes, adapter=None):
    """Return ``(lr_clip, refs, layout)``; one HR reference per GOP."""
    if isinstance(stream, (bytes, bytearray)):
        stream = MixedStream.from_bytes(stream)
    adapter = adapter or adapter_from_params(
        stream.codec_id, _params_blob(stream.params))
    layout = stream.layout
    lr_parts, refs = [], []
    for g in range(layout.gop_count):
        a, b = layout.gop_bounds(g)
        bl = adapter.decode(stream.bl[g])
        if len(bl) != b - a:
            raise CodecError(f"GOP {g}: base layer decoded {len(bl)} frames, expected {b - a}")
        el = adapter.decode(stream.el[g])
        if len(el) != 1:
            raise CodecError(f"GOP {g}: enhancement layer holds {len(el)} frames, expected 1")
        lr_parts.append(bl)
        refs.append(el[0])
    lr = np.concatenate(lr_parts)
    return lr, refs, layout


def _params_blob(params: dict) -> bytes:
    return json.dumps(params).encode()


def temporal_window(n_frames: int, t: int, radius: int) -> list[int]:
    """Indices ``t-radius .. t+radius``, replicated at the clip edges."""
    return [min(max(i, 0), n_frames - 1) for i in range(t - radius, t + radius + 1)]


def restore_stream(stream, model, adapter=None, batch_size: int = 4,
                   timings: list | None = None) -> np.ndarray:
    """Decode ``stream`` and restore every frame at full resolution."""
    lr, refs, layout = decode_mixed(stream, adapter)
    cfg = model.cfg
    if cfg.scale != layout.scale:
        raise ValueError(f"model scale {cfg.scale} does not match stream scale {layout.scale}")
    n = len(lr)
    out = []
    model.eval()
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        windows = np.stack([lr[temporal_window(n, t, cfg.temporal_radius)] for t in idx])
        ref = np.stack([refs[layout.gop_of(t)] for t in idx])
        tic = time.perf_counter()
        with torch.no_grad():
            res = model.restore(windows, ref)
        if timings is not None:
            timings.extend([(time.perf_counter() - tic) / len(idx)] * len(idx))
        out.append(res)
    hr = np.concatenate(out)[..., : layout.height, : layout.width]
    return hr


def bicubic_baseline(stream, adapter=None) -> np.ndarray:
    """Decoder output without restoration: bicubic upsample of the base layer."""
    lr, _, layout = decode_mixed(stream, adapter)
    up = imgops.bicubic_resize(lr, layout.scale)
    return up[..., : layout.height, : layout.width]
