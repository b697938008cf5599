"""Codec adapters: the built-in toy codec and a generic shell-out wrapper.

External codecs are driven by command templates.  Recognised placeholders are
``{in}``, ``{out}``, ``{qp}``, ``{w}``, ``{h}``; the encoder gets a Y4M file as
``{in}`` and must write a bitstream to ``{out}``, the decoder the reverse.
"""
from __future__ import annotations

import json
import shlex
import string
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import toycodec
from .toycodec import CodecError
from .frameio import read_y4m, write_y4m

PLACEHOLDERS = frozenset({"in", "out", "qp", "w", "h"})

TOY_ID = 0
EXTERNAL_ID = 1


def render_command(template: str, **values) -> list[str]:
    """Substitute placeholders into ``template`` and split it into argv.

    Every field in the template must be a known placeholder with a value.
    """
    fields = {f for _, f, _, _ in string.Formatter().parse(template) if f is not None}
    unknown = fields - PLACEHOLDERS
    if unknown:
        raise CodecError(f"unknown placeholder(s) {sorted(unknown)} in {template!r}")
    missing = fields - set(values)
    if missing:
        raise CodecError(f"no value for placeholder(s) {sorted(missing)} in {template!r}")
    # split first so substituted paths containing spaces stay one argument
    strs = {k: str(v) for k, v in values.items()}
    argv = [tok.format(**strs) for tok in shlex.split(template)]
    if not argv:
        raise CodecError("empty command template")
    return argv


def external_adapter_run(template: str, inputs: bytes, timeout: float | None = 600,
                         **values) -> bytes:
    """Run ``template`` with ``inputs`` written to ``{in}``; return the bytes of ``{out}``."""
    with tempfile.TemporaryDirectory(prefix="mixedrc-") as tmp:
        src, dst = Path(tmp) / "input", Path(tmp) / "output"
        src.write_bytes(inputs)
        argv = render_command(template, **{"in": src, "out": dst, **values})
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except FileNotFoundError as exc:
            raise CodecError(f"codec command not found: {argv[0]}") from exc
        if proc.returncode != 0:
            raise CodecError(
                f"{argv[0]} exited with status {proc.returncode}: "
                f"{proc.stderr.decode(errors='replace').strip()}"
            )
        if not dst.exists():
            raise CodecError(
                f"{argv[0]} produced no output file; stderr: "
                f"{proc.stderr.decode(errors='replace').strip()}"
            )
        return dst.read_bytes()


class ToyAdapter:
    codec_id = TOY_ID
    name = "toy"

    def encode(self, clip: np.ndarray, qp: int) -> bytes:
        return toycodec.toy_encode(clip, qp)

    def decode(self, data: bytes) -> np.ndarray:
        try:
            return toycodec.toy_decode(data)
        except toycodec.CodecError as exc:
            raise CodecError(str(exc)) from exc

    def params(self) -> dict:
        return {}


@dataclass
class ExternalAdapter:
    """Shell-out codec, e.g. an HM/SHM wrapper script."""

    encode_cmd: str
    decode_cmd: str
    timeout: float | None = 600
    extra: dict = field(default_factory=dict)

    codec_id = EXTERNAL_ID
    name = "external"

    def encode(self, clip: np.ndarray, qp: int) -> bytes:
        clip = np.asarray(clip)
        if clip.ndim == 3:
            clip = clip[None]
        with tempfile.TemporaryDirectory(prefix="mixedrc-") as tmp:
            y4m = Path(tmp) / "src.y4m"
            write_y4m(y4m, clip)
            data = y4m.read_bytes()
        return external_adapter_run(self.encode_cmd, data, self.timeout, qp=qp,
                                    w=clip.shape[-1], h=clip.shape[-2])

    def decode(self, data: bytes) -> np.ndarray:
        out = external_adapter_run(self.decode_cmd, data, self.timeout, qp=0, w=0, h=0)
        with tempfile.TemporaryDirectory(prefix="mixedrc-") as tmp:
            y4m = Path(tmp) / "dec.y4m"
            y4m.write_bytes(out)
            clip, _ = read_y4m(y4m)
        return clip

    def params(self) -> dict:
        return {"encode_cmd": self.encode_cmd, "decode_cmd": self.decode_cmd, **self.extra}


def adapter_from_params(codec_id: int, blob: bytes):
    params = json.loads(blob.decode()) if blob else {}
    if codec_id == TOY_ID:
        return ToyAdapter()
    if codec_id == EXTERNAL_ID:
        return ExternalAdapter(params["encode_cmd"], params["decode_cmd"])
    raise CodecError(f"unknown codec id {codec_id}")
