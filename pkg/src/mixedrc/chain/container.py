"""The MXRC dual-bitstream container.

Little-endian layout::

    "MXRC" | u8 version | u8 scale | u16 gop_size | u32 width | u32 height
    | u32 frame_count | u8 codec_id | u16 params_len | params (UTF-8 JSON)
    then per GOP:  u32 el_len | el payload | u32 bl_len | bl payload

``width``/``height`` are the full-resolution source dimensions.  The EL
payload is the intra-coded first HR frame of the GOP, the BL payload the
down-scaled GOP.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

MAGIC = b"MXRC"
VERSION = 1

_HEAD = struct.Struct("<4sBBHIIIBH")
_LEN = struct.Struct("<I")


class ContainerError(ValueError):
    pass


@dataclass(frozen=True)
class GopLayout:
    gop_size: int
    scale: int
    frame_count: int
    width: int
    height: int

    def __post_init__(self):
        if self.gop_size < 1:
            raise ValueError("gop_size must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")

    @property
    def gop_count(self) -> int:
        return math.ceil(self.frame_count / self.gop_size)

    def gop_bounds(self, g: int) -> tuple[int, int]:
        start = g * self.gop_size
        return start, min(start + self.gop_size, self.frame_count)

    def gop_lengths(self) -> list[int]:
        return [b - a for a, b in map(self.gop_bounds, range(self.gop_count))]

    def gop_of(self, t: int) -> int:
        return t // self.gop_size


@dataclass
class MixedStream:
    layout: GopLayout
    codec_id: int
    params: dict = field(default_factory=dict)
    el: list[bytes] = field(default_factory=list)
    bl: list[bytes] = field(default_factory=list)

    @property
    def payload_bytes(self) -> int:
        return sum(map(len, self.el)) + sum(map(len, self.bl))

    def to_bytes(self) -> bytes:
        lay = self.layout
        if len(self.el) != lay.gop_count or len(self.bl) != lay.gop_count:
            raise ContainerError(
                f"{len(self.el)} EL / {len(self.bl)} BL records for {lay.gop_count} GOPs"
            )
        blob = json.dumps(self.params, sort_keys=True, separators=(",", ":")).encode()
        out = bytearray(_HEAD.pack(MAGIC, VERSION, lay.scale, lay.gop_size, lay.width,
                                   lay.height, lay.frame_count, self.codec_id, len(blob)))
        out += blob
        for el, bl in zip(self.el, self.bl):
            out += _LEN.pack(len(el)) + el + _LEN.pack(len(bl)) + bl
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MixedStream":
        if len(data) < _HEAD.size:
            raise ContainerError("truncated container header")
        magic, version, scale, gop, w, h, n, codec_id, plen = _HEAD.unpack_from(data)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        pos = _HEAD.size
        if pos + plen > len(data):
            raise ContainerError("truncated codec parameter block")
        try:
            params = json.loads(data[pos:pos + plen].decode()) if plen else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"corrupt codec parameter block: {exc}") from exc
        pos += plen
        layout = GopLayout(gop, scale, n, w, h)
        el, bl = [], []
        for g in range(layout.gop_count):
            for dest, name in ((el, "EL"), (bl, "BL")):
                if pos + _LEN.size > len(data):
                    raise ContainerError(f"truncated {name} length in GOP {g}")
                (size,) = _LEN.unpack_from(data, pos)
                pos += _LEN.size
                if pos + size > len(data):
                    raise ContainerError(
                        f"GOP {g} {name} declares {size} bytes, only {len(data) - pos} remain"
                    )
                dest.append(bytes(data[pos:pos + size]))
                pos += size
        if pos != len(data):
            raise ContainerError(f"{len(data) - pos} trailing bytes after last GOP")
        return cls(layout, codec_id, params, el, bl)

    def picture_counts(self) -> dict:
        """Transmitted pictures per layer (EL key-frames vs BL frames)."""
        return {"el": len(self.el), "bl": self.layout.frame_count}
