import math

import numpy as np
import pytest

from mixedrc.evaluation import (PSNR_CAP, RdCurve, RdPoint, bd_rate, bitrate_kbps, psnr,
                                rd_sweep, read_csv, ssim, ssim_map, write_csv, write_json)
from mixedrc.train import synth_clip
from oracles import naive_ssim


def test_psnr_hand_case():
    a = np.zeros((1, 2, 2))
    b = np.array([[[0.1, 0.1], [0.0, 0.0]]])
    # MSE = 0.02 / 4 = 0.005, PSNR = 10 log10(200)
    assert abs(psnr(a, b) - 23.0103) <= 1e-3


def test_psnr_cap_and_clip_average():
    a = np.random.default_rng(0).random((2, 1, 4, 4))
    assert psnr(a, a) == PSNR_CAP
    b = a.copy()
    b[0] += 0.1
    # MSE averaged over frames before the log: (0.01 + 0) / 2
    assert abs(psnr(a, b) - 10 * math.log10(1 / 0.005)) < 1e-9
    with pytest.raises(ValueError, match="shape"):
        psnr(a, b[:1])


def test_psnr_luma_option():
    a = np.zeros((3, 2, 2))
    b = np.zeros((3, 2, 2))
    b[2] = 0.5
    assert psnr(a, b, luma=True) > psnr(a, b)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    b = np.clip(a + 0.1 * rng.standard_normal((16, 16)), 0, 1)
    assert abs(ssim(a, b) - naive_ssim(a, b)) <= 1e-6


def test_ssim_identity_is_exactly_one():
    a = np.random.default_rng(5).random((1, 16, 16))
    assert ssim(a, a) == 1.0
    clip = np.random.default_rng(6).random((2, 3, 12, 12))
    assert ssim(clip, clip) == 1.0


def test_ssim_small_frame_rejected_and_map_shape():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    assert ssim_map(np.zeros((16, 20)), np.zeros((16, 20))).shape == (6, 10)


def _curve(label, rates, q):
    return RdCurve.from_arrays(label, rates, q)


RATES = [100.0, 200.0, 400.0, 800.0]
QUAL = [30.0, 33.0, 35.5, 37.0]


def test_bd_rate_identity_and_halving():
    a = _curve("a", RATES, QUAL)
    assert abs(bd_rate(a, a)) <= 1e-9
    half = _curve("h", [r / 2 for r in RATES], QUAL)
    assert abs(bd_rate(a, half) + 50.0) <= 0.1
    assert abs(bd_rate(a, half, "pchip") + 50.0) <= 0.1


@pytest.mark.parametrize("s", [0.8, 1.25])
def test_bd_rate_uniform_scaling(s):
    a = _curve("a", RATES, QUAL)
    t = _curve("t", [r * s for r in RATES], QUAL)
    assert abs(bd_rate(a, t) - (s - 1) * 100) <= 0.1


def test_bd_rate_errors():
    a = _curve("a", RATES, QUAL)
    with pytest.raises(ValueError, match=">= 4"):
        bd_rate(a, _curve("b", RATES[:3], QUAL[:3]))
    with pytest.raises(ValueError, match="overlapping"):
        bd_rate(a, _curve("b", RATES, [q + 20 for q in QUAL]))
    with pytest.raises(ValueError, match="not increasing"):
        bd_rate(a, _curve("b", RATES, QUAL[::-1]))
    with pytest.raises(ValueError, match="method"):
        bd_rate(a, a, "linear")
    with pytest.raises(ValueError, match="strictly"):
        _curve("b", [1, 1, 2, 3], QUAL)
    with pytest.raises(ValueError):
        RdPoint(0.0, 30.0)


def test_bitrate_kbps():
    assert bitrate_kbps(1000, 25, 25) == 8.0


def test_csv_json_round_trip(tmp_path):
    a = RdCurve("a", [RdPoint(r, q, qp, 0.9) for r, q, qp in zip(RATES, QUAL, (37, 32, 27, 22))])
    b = _curve("b", RATES, QUAL)
    write_csv(tmp_path / "rd.csv", [a, b])
    back = read_csv(tmp_path / "rd.csv")
    assert [c.label for c in back] == ["a", "b"]
    assert back[0].points == a.points and back[1].points == b.points
    write_json(tmp_path / "rd.json", a)
    assert '"qp": 37' in (tmp_path / "rd.json").read_text()


def test_rd_sweep_is_monotone():
    clip = synth_clip(4, 32, seed=4)
    curve = rd_sweep(clip, [22, 28, 37, 45], gop=4)
    by_qp = sorted(curve.points, key=lambda p: p.qp)
    assert [p.bitrate for p in by_qp] == sorted([p.bitrate for p in by_qp], reverse=True)
    assert [p.quality for p in by_qp] == sorted([p.quality for p in by_qp], reverse=True)
    with pytest.raises(ValueError):
        rd_sweep(clip, [37])
