"""Frame I/O: 8-bit Y4M files and zero-padded PNG sequences.

In memory a clip is a float32 ``(T, C, H, W)`` array in ``[0, 1]``.  One
channel is luma; three channels are RGB, converted to full-range BT.601
YCbCr 4:4:4 when written to Y4M.
"""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from ..imgops import to_float, to_uint8

_RGB2YCC = np.array([[0.299, 0.587, 0.114],
                     [-0.168736, -0.331264, 0.5],
                     [0.5, -0.418688, -0.081312]])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    ycc = np.einsum("ij,...jhw->...ihw", _RGB2YCC, rgb.astype(np.float64))
    ycc[..., 1:, :, :] += 0.5
    return ycc


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    ycc = ycc.astype(np.float64).copy()
    ycc[..., 1:, :, :] -= 0.5
    return np.einsum("ij,...jhw->...ihw", _YCC2RGB, ycc)


def write_y4m(path, clip: np.ndarray, fps=Fraction(25)) -> None:
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[None]
    t, c, h, w = clip.shape
    if c == 1:
        planes, colour = clip, "Cmono"
    elif c == 3:
        planes, colour = rgb_to_ycbcr(clip), "C444"
    else:
        raise ValueError(f"Y4M output needs 1 or 3 channels, got {c}")
    fps = Fraction(fps)
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{fps.numerator}:{fps.denominator} Ip A1:1 {colour}\n"
                 .encode())
        for frame in to_uint8(planes):
            fh.write(b"FRAME\n")
            fh.write(frame.tobytes())


def read_y4m(path) -> tuple[np.ndarray, Fraction]:
    data = Path(path).read_bytes()
    end = data.find(b"\n")
    if not data.startswith(b"YUV4MPEG2") or end < 0:
        raise ValueError(f"{path}: not a YUV4MPEG2 file")
    params = {tok[:1]: tok[1:] for tok in data[:end].decode().split()[1:]}
    w, h = int(params["W"]), int(params["H"])
    num, den = params.get("F", "25:1").split(":")
    fps = Fraction(int(num), int(den))
    colour = params.get("C", "420jpeg")
    if colour.startswith("mono"):
        sizes = [(h, w)]
    elif colour.startswith("444"):
        sizes = [(h, w)] * 3
    elif colour.startswith("420"):
        sizes = [(h, w)] + [((h + 1) // 2, (w + 1) // 2)] * 2
    else:
        raise ValueError(f"{path}: unsupported Y4M colour space {colour}")
    frame_bytes = sum(a * b for a, b in sizes)
    frames, pos = [], end + 1
    while pos < len(data):
        line_end = data.find(b"\n", pos)
        if not data.startswith(b"FRAME", pos) or line_end < 0:
            raise ValueError(f"{path}: malformed FRAME marker at byte {pos}")
        pos = line_end + 1
        if pos + frame_bytes > len(data):
            raise ValueError(f"{path}: truncated frame")
        planes = []
        for ph, pw in sizes:
            p = np.frombuffer(data, np.uint8, ph * pw, pos).reshape(ph, pw)
            pos += ph * pw
            if (ph, pw) != (h, w):
                p = p.repeat(2, 0).repeat(2, 1)[:h, :w]
            planes.append(p)
        frames.append(to_float(np.stack(planes)))
    if not frames:
        raise ValueError(f"{path}: no frames")
    clip = np.stack(frames)
    if clip.shape[1] == 3:
        clip = np.clip(ycbcr_to_rgb(clip), 0, 1).astype(np.float32)
    return clip, fps


def write_png_dir(directory, clip: np.ndarray, prefix: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clip = np.asarray(clip)
    if clip.ndim == 3:
        clip = clip[None]
    digits = max(5, len(str(len(clip))))
    paths = []
    for i, frame in enumerate(to_uint8(clip)):
        img = frame[0] if frame.shape[0] == 1 else np.moveaxis(frame, 0, -1)
        p = directory / f"{prefix}_{i:0{digits}d}.png"
        Image.fromarray(img).save(p)
        paths.append(p)
    return paths


def read_png_dir(directory) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = []
    for p in paths:
        img = np.asarray(Image.open(p))
        if img.ndim == 2:
            img = img[None]
        else:
            img = np.moveaxis(img[..., :3], -1, 0)
        frames.append(to_float(img))
    return np.stack(frames)


def read_clip(path) -> tuple[np.ndarray, Fraction]:
    """Read a ``.y4m`` file or a directory of PNG frames (assumed 25 fps)."""
    path = Path(path)
    if path.is_dir():
        return read_png_dir(path), Fraction(25)
    return read_y4m(path)


def write_clip(path, clip: np.ndarray, fps=Fraction(25)) -> None:
    path = Path(path)
    if path.suffix.lower() == ".y4m":
        write_y4m(path, clip, fps)
    else:
        write_png_dir(path, clip)
