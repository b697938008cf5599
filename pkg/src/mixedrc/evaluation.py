"""Quality metrics, RD curves and Bjontegaard delta rate."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import imgops

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
CSV_FIELDS = ("label", "qp", "bitrate_kbps", "psnr_db", "ssim")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0, luma: bool = False) -> float:
    """PSNR in dB; identical inputs give ``PSNR_CAP``.

    For clips the per-frame MSEs are averaged before taking the log.
    """
    a, b = _pair(a, b)
    if luma:
        a, b = imgops.to_luma(a), imgops.to_luma(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_val**2 / mse))


def _valid_filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    h, w = x.shape[-2:]
    rows = sum(g[i] * x[..., i:h - n + 1 + i, :] for i in range(n))
    return sum(g[i] * rows[..., :, i:w - n + 1 + i] for i in range(n))


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """SSIM index at every valid 11x11 Gaussian window position of 2-D planes."""
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"frame {a.shape[-2:]} is smaller than the {SSIM_WINDOW}px SSIM window")
    g = imgops.gaussian_kernel1d(SSIM_SIGMA, SSIM_WINDOW)
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _valid_filter(a, g), _valid_filter(b, g)
    var_a = _valid_filter(a * a, g) - mu_a**2
    var_b = _valid_filter(b * b, g) - mu_b**2
    cov = _valid_filter(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM on the luma plane of frames ``(C, H, W)`` or clips ``(T, C, H, W)``.

    2-D inputs are taken as a single plane.
    """
    a, b = _pair(a, b)
    if a.ndim >= 3:
        a, b = imgops.to_luma(a)[..., 0, :, :], imgops.to_luma(b)[..., 0, :, :]
    return float(ssim_map(a, b, data_range).mean())


# ---------------------------------------------------------------------------
# RD curves and BD-rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RdPoint:
    bitrate: float
    quality: float
    qp: int | None = None
    ssim: float | None = None

    def __post_init__(self):
        if not self.bitrate > 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")


@dataclass
class RdCurve:
    label: str
    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bitrate)
        rates = [p.bitrate for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"curve {self.label!r}: bitrates must be strictly increasing")

    @classmethod
    def from_arrays(cls, label: str, bitrates, qualities) -> "RdCurve":
        return cls(label, [RdPoint(float(r), float(q)) for r, q in zip(bitrates, qualities)])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bitrate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def rows(self) -> list[dict]:
        return [{"label": self.label, "qp": p.qp, "bitrate_kbps": p.bitrate,
                 "psnr_db": p.quality, "ssim": p.ssim} for p in self.points]


def _check_curve(c: RdCurve) -> None:
    if len(c.points) < 4:
        raise ValueError(f"curve {c.label!r} has {len(c.points)} points; BD-rate needs >= 4")
    q = c.qualities
    if np.any(np.diff(q) <= 0):
        raise ValueError(f"curve {c.label!r}: quality is not increasing with bitrate")


def bd_rate(anchor: RdCurve, test: RdCurve, method: str = "cubic") -> float:
    """Average bitrate difference of ``test`` vs ``anchor`` at equal quality, in percent.

    Negative values mean ``test`` needs fewer bits.  ``method`` is ``"cubic"``
    (least-squares cubic in quality, the classic formulation) or ``"pchip"``.
    """
    _check_curve(anchor)
    _check_curve(test)
    qa, qt = anchor.qualities, test.qualities
    la, lt = np.log10(anchor.rates), np.log10(test.rates)
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    if hi <= lo:
        raise ValueError("curves have no overlapping quality range")
    if method == "cubic":
        pa, pt = np.polyint(np.polyfit(qa, la, 3)), np.polyint(np.polyfit(qt, lt, 3))
        int_a = np.polyval(pa, hi) - np.polyval(pa, lo)
        int_t = np.polyval(pt, hi) - np.polyval(pt, lo)
    elif method == "pchip":
        int_a = PchipInterpolator(qa, la).integrate(lo, hi)
        int_t = PchipInterpolator(qt, lt).integrate(lo, hi)
    else:
        raise ValueError(f"unknown BD-rate method {method!r}")
    avg = (int_t - int_a) / (hi - lo)
    return float((10.0**avg - 1.0) * 100.0)


# ---------------------------------------------------------------------------
# RD sweeps
# ---------------------------------------------------------------------------

def bitrate_kbps(n_bytes: int, fps: float, n_frames: int) -> float:
    return n_bytes * 8.0 * float(fps) / n_frames / 1000.0


def bicubic_restorer(stream_bytes: bytes) -> np.ndarray:
    from .chain.pipeline import bicubic_baseline
    return bicubic_baseline(stream_bytes)


def model_restorer(model):
    from .chain.pipeline import restore_stream

    def restore(stream_bytes: bytes) -> np.ndarray:
        return restore_stream(stream_bytes, model)
    return restore


def rd_sweep(clip, qps, restorer=bicubic_restorer, scale: int = 2, gop: int = 16,
             el_qp: int | None = None, fps: float = 25.0, label: str = "mixedrc",
             adapter=None) -> RdCurve:
    """Encode/decode/restore ``clip`` at every QP and measure rate and quality.

    Bitrate counts every container byte, both layers and headers included.
    With ``el_qp=None`` the key-frames use the same QP as the base layer.
    """
    from .chain.pipeline import encode_mixed

    if len(qps) < 2:
        raise ValueError("an RD sweep needs at least two QPs")
    clip = np.asarray(clip, dtype=np.float32)
    points = []
    for qp in qps:
        stream = encode_mixed(clip, scale, gop, qp, qp if el_qp is None else el_qp, adapter)
        data = stream.to_bytes()
        out = restorer(data)
        points.append(RdPoint(bitrate_kbps(len(data), fps, len(clip)), psnr(out, clip),
                              int(qp), ssim(out, clip)))
    return RdCurve(label, points)


def write_csv(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        wr.writeheader()
        for c in curves if isinstance(curves, (list, tuple)) else [curves]:
            wr.writerows(c.rows())


def write_json(path, curves) -> None:
    curves = curves if isinstance(curves, (list, tuple)) else [curves]
    Path(path).write_text(json.dumps([{"label": c.label, "points": c.rows()} for c in curves],
                                     indent=2))


def read_csv(path) -> list[RdCurve]:
    by_label: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            qp = row.get("qp")
            ss = row.get("ssim")
            by_label.setdefault(row["label"], []).append(RdPoint(
                float(row["bitrate_kbps"]), float(row["psnr_db"]),
                int(qp) if qp not in (None, "", "None") else None,
                float(ss) if ss not in (None, "", "None") else None))
    return [RdCurve(k, v) for k, v in by_label.items()]

