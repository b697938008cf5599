"""Hermetic intra-only block-DCT codec.

Each 8x8 block of each channel is transformed with an orthonormal DCT on the
8-bit scale, quantised with a uniform step ``2 ** ((qp - 4) / 6)``, zigzag
scanned and written as (run, level) pairs in LEB128 varints.  The DC term is
coded as a difference from the previous block's DC.
"""
from __future__ import annotations

import struct

import numpy as np
from scipy.fft import dctn, idctn

MAGIC = b"TOYC"
VERSION = 1
BLOCK = 8
EOB = 64
QP_MAX = 51

_HEADER = struct.Struct("<4sBBBHIIB")  # magic, version, qp, dtype, frames, h, w, channels
_DTYPES = {0: np.float32, 1: np.float64}


class CodecError(RuntimeError):
    pass


def qstep(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def _zigzag_order(n: int = BLOCK) -> np.ndarray:
    idx = sorted(((i, j) for i in range(n) for j in range(n)),
                 key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return np.array([i * n + j for i, j in idx])


ZIGZAG = _zigzag_order()


def _check_qp(qp: int) -> None:
    if not 0 <= qp <= QP_MAX:
        raise ValueError(f"qp must be in [0, {QP_MAX}], got {qp}")


def _blocks(plane: np.ndarray) -> np.ndarray:
    """(..., H, W) with H, W multiples of 8 -> (..., nby, nbx, 8, 8)."""
    *lead, h, w = plane.shape
    b = plane.reshape(*lead, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
    return np.swapaxes(b, -3, -2)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    *lead, nby, nbx, _, _ = blocks.shape
    return np.swapaxes(blocks, -3, -2).reshape(*lead, nby * BLOCK, nbx * BLOCK)


def _pad8(clip: np.ndarray) -> np.ndarray:
    h, w = clip.shape[-2:]
    ph, pw = (-h) % BLOCK, (-w) % BLOCK
    if ph or pw:
        pad = [(0, 0)] * (clip.ndim - 2) + [(0, ph), (0, pw)]
        clip = np.pad(clip, pad, mode="edge")
    return clip


def _quantise(clip: np.ndarray, qp: int) -> np.ndarray:
    pix = _pad8(np.asarray(clip, dtype=np.float64)) * 255.0 - 128.0
    coef = dctn(_blocks(pix), axes=(-2, -1), norm="ortho")
    return np.rint(coef / qstep(qp)).astype(np.int64)


def _reconstruct(levels: np.ndarray, qp: int, h: int, w: int, dtype) -> np.ndarray:
    pix = _unblocks(idctn(levels * qstep(qp), axes=(-2, -1), norm="ortho"))
    pix = np.clip(np.rint(pix + 128.0), 0, 255)[..., :h, :w]
    return (pix / 255.0).astype(dtype)


def toy_quantize(clip, qp: int) -> np.ndarray:
    """Decoded result of ``toy_decode(toy_encode(clip, qp))`` without the bitstream."""
    _check_qp(qp)
    clip = np.asarray(clip)
    return _reconstruct(_quantise(clip, qp), qp, *clip.shape[-2:], clip.dtype)


# ---------------------------------------------------------------------------
# varints
# ---------------------------------------------------------------------------

def _put_uvarint(out: bytearray, v: int) -> None:
    while v >= 0x80:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    out.append(v)


def _put_svarint(out: bytearray, v: int) -> None:
    _put_uvarint(out, (v << 1) if v >= 0 else ((-v) << 1) - 1)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data, self.pos = data, pos

    def uvarint(self) -> int:
        shift = result = 0
        while True:
            if self.pos >= len(self.data):
                raise CodecError("truncated toy bitstream")
            byte = self.data[self.pos]
            self.pos += 1
            result |= (byte & 0x7F) << shift
            if byte < 0x80:
                return result
            shift += 7

    def svarint(self) -> int:
        u = self.uvarint()
        return (u >> 1) if not u & 1 else -((u + 1) >> 1)


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def toy_encode(clip, qp: int) -> bytes:
    """Encode a ``(T, C, H, W)`` clip (or a single ``(C, H, W)`` frame) in ``[0, 1]``."""
    _check_qp(qp)
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[None]
    if clip.ndim != 4:
        raise ValueError(f"expected (T, C, H, W), got shape {clip.shape}")
    dtype_code = 1 if clip.dtype == np.float64 else 0
    t, c, h, w = clip.shape
    levels = _quantise(clip, qp)  # (T, C, nby, nbx, 8, 8)
    zz = levels.reshape(*levels.shape[:-2], 64)[..., ZIGZAG].reshape(-1, 64)

    out = bytearray(_HEADER.pack(MAGIC, VERSION, qp, dtype_code, t, h, w, c))
    nblocks_per_plane = levels.shape[2] * levels.shape[3]
    prev_dc = 0
    for n, block in enumerate(zz.tolist()):
        if n % nblocks_per_plane == 0:
            prev_dc = 0
        _put_svarint(out, block[0] - prev_dc)
        prev_dc = block[0]
        run = 0
        for v in block[1:]:
            if v == 0:
                run += 1
                continue
            _put_uvarint(out, run)
            _put_svarint(out, v)
            run = 0
        _put_uvarint(out, EOB)
    return bytes(out)


def toy_header(data: bytes) -> dict:
    if len(data) < _HEADER.size:
        raise CodecError("truncated toy bitstream header")
    magic, version, qp, dtype_code, t, h, w, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodecError(f"bad toy codec magic {magic!r}")
    if version != VERSION:
        raise CodecError(f"unsupported toy codec version {version}")
    return dict(qp=qp, dtype=_DTYPES.get(dtype_code, np.float32), frames=t,
                height=h, width=w, channels=c)


def toy_decode(data: bytes) -> np.ndarray:
    """Inverse of :func:`toy_encode`; returns ``(T, C, H, W)``."""
    hdr = toy_header(data)
    t, c, h, w = hdr["frames"], hdr["channels"], hdr["height"], hdr["width"]
    nby, nbx = -(-h // BLOCK), -(-w // BLOCK)
    per_plane = nby * nbx
    zz = np.zeros((t * c * per_plane, 64), dtype=np.int64)
    rd = _Reader(data, _HEADER.size)
    prev_dc = 0
    for n in range(zz.shape[0]):
        if n % per_plane == 0:
            prev_dc = 0
        prev_dc += rd.svarint()
        zz[n, 0] = prev_dc
        k = 1
        while True:
            run = rd.uvarint()
            if run == EOB:
                break
            k += run
            if k >= 64:
                raise CodecError("corrupt toy bitstream: coefficient index out of range")
            zz[n, k] = rd.svarint()
            k += 1
    if rd.pos != len(data):
        raise CodecError(f"{len(data) - rd.pos} trailing bytes in toy bitstream")
    levels = np.empty_like(zz)
    levels[:, ZIGZAG] = zz
    levels = levels.reshape(t, c, nby, nbx, BLOCK, BLOCK)
    return _reconstruct(levels, hdr["qp"], h, w, hdr["dtype"])
