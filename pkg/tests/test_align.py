import numpy as np
import pytest
import torch
import torch.nn.functional as F

from mixedrc import align
from mixedrc.align import AlignConfig, IncepHDC, OffsetRefiner, deform_sample


def _plain_conv(feat, weight, bias=None, dilation=1):
    p = dilation * (weight.shape[-1] // 2)
    return F.conv2d(F.pad(feat, (p, p, p, p), mode="replicate"), weight, bias, dilation=dilation)


@pytest.mark.parametrize("k,dil", [(3, 1), (3, 2), (1, 1), (5, 1)])
def test_zero_offsets_equal_plain_convolution(k, dil):
    g = torch.Generator().manual_seed(k * 10 + dil)
    feat = torch.rand(2, 3, 7, 9, generator=g, dtype=torch.float64)
    w = torch.randn(4, 3, k, k, generator=g, dtype=torch.float64)
    b = torch.randn(4, generator=g, dtype=torch.float64)
    off = torch.zeros(2, 2 * k * k, 7, 9, dtype=torch.float64)
    out = deform_sample(feat, off, w, b, dilation=dil)
    assert torch.allclose(out, _plain_conv(feat, w, b, dil), atol=1e-12)


@pytest.mark.parametrize("dy,dx", [(0, 1), (2, -1), (-3, 0), (1, 1)])
def test_integer_offsets_equal_shifted_convolution(dy, dx):
    g = torch.Generator().manual_seed(7)
    feat = torch.rand(1, 2, 8, 8, generator=g, dtype=torch.float64)
    w = torch.randn(3, 2, 3, 3, generator=g, dtype=torch.float64)
    off = torch.zeros(1, 9, 2, 8, 8, dtype=torch.float64)
    off[:, :, 0], off[:, :, 1] = dy, dx
    out = deform_sample(feat, off.view(1, 18, 8, 8), w)
    # shift oracle: sample the replicate-padded map at (i + dy, j + dx)
    m = 5
    pad = F.pad(feat, (m, m, m, m), mode="replicate")
    shifted = pad[:, :, m + dy - 1:m + dy + 9, m + dx - 1:m + dx + 9]
    assert torch.equal(out, F.conv2d(shifted, w))


def test_fractional_offset_is_bilinear():
    feat = torch.arange(16, dtype=torch.float64).view(1, 1, 4, 4)
    w = torch.ones(1, 1, 1, 1, dtype=torch.float64)
    off = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
    off[:, 1] = 0.25
    out = deform_sample(feat, off, w)
    assert torch.allclose(out[0, 0, 1, :3], feat[0, 0, 1, :3] + 0.25)


def test_unbatched_and_shape_errors():
    feat = torch.rand(2, 5, 5)
    w = torch.randn(2, 2, 3, 3)
    assert deform_sample(feat, torch.zeros(18, 5, 5), w).shape == (2, 5, 5)
    with pytest.raises(ValueError, match="offset field"):
        deform_sample(feat, torch.zeros(10, 5, 5), w)
    with pytest.raises(ValueError, match="input channels"):
        deform_sample(torch.rand(3, 5, 5), torch.zeros(18, 5, 5), w)


def test_deform_sample_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(3)
    feat = torch.rand(1, 2, 5, 5, generator=g, dtype=torch.float64, requires_grad=True)
    off = (torch.rand(1, 18, 5, 5, generator=g, dtype=torch.float64) * 0.8 + 0.1)
    off.requires_grad_(True)
    w = torch.randn(2, 2, 3, 3, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda f, o, k: deform_sample(f, o, k), (feat, off, w),
                                    eps=1e-6, atol=1e-6)


def test_warp_by_integer_flow():
    feat = torch.rand(1, 1, 6, 6)
    flow = torch.zeros(1, 2, 6, 6)
    flow[:, 1] = 2
    out = align.warp(feat, flow)
    assert torch.equal(out[..., :4], feat[..., 2:])


def test_incep_hdc_receptive_field_and_identity_gate():
    blk = IncepHDC(4, (1, 2, 5), "none")
    x = torch.zeros(1, 4, 41, 41, requires_grad=True)
    blk.features(x)[0, :, 20, 20].sum().backward()
    rows = torch.nonzero(x.grad[0].abs().sum(0).sum(1)).flatten()
    # cumulative dilations 1+2+5 give a 17-pixel receptive field
    assert rows.max() - rows.min() + 1 == 17
    with pytest.raises(ValueError):
        blk(torch.zeros(1, 3, 8, 8))


@pytest.mark.parametrize("attention", ["spatial", "channel", "none"])
def test_incep_hdc_shapes(attention):
    blk = IncepHDC(8, (1, 2, 5), attention)
    assert blk(torch.rand(2, 8, 9, 11)).shape == (2, 8, 9, 11)


def test_fresh_refiner_is_identity_on_offsets():
    cfg = AlignConfig()
    ref = OffsetRefiner(6, cfg)
    o = torch.randn(2, cfg.offset_channels(), 8, 8)
    out = ref(o, torch.rand(2, 6, 8, 8), torch.rand(2, 6, 8, 8))
    assert torch.equal(out, o)


def test_refiner_rejects_bad_offsets():
    ref = OffsetRefiner(4, AlignConfig())
    with pytest.raises(ValueError, match="inconsistent"):
        ref(torch.zeros(1, 5, 8, 8), torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 8, 8))


@pytest.mark.parametrize("mode", ["refined", "stacked"])
def test_fresh_aligner_passes_reference_through(mode):
    torch.manual_seed(0)
    cfg = AlignConfig(offset_mode=mode)
    al = align.build_aligner(4, cfg)
    f_ref, f_lq = torch.rand(1, 4, 8, 8), torch.rand(1, 4, 8, 8)
    out, o = al(f_ref, f_lq, return_offsets=True)
    assert torch.equal(o, torch.zeros_like(o))
    assert torch.allclose(out, f_ref, atol=1e-6)
    assert align.align(f_ref[0], f_lq[0], al).shape == (4, 8, 8)


def test_refined_offsets_accumulate_residuals():
    torch.manual_seed(1)
    cfg = AlignConfig(n_refiners=2)
    al = align.RefinedAlign(4, cfg)
    for p in al.parameters():
        p.data.add_(0.05 * torch.randn_like(p))
    f_ref, f_lq = torch.rand(1, 4, 8, 8), torch.rand(1, 4, 8, 8)
    o = al.generator(f_ref, f_lq)
    for r in al.refiners:
        o = r.residual(o, f_ref, f_lq) + o
    assert torch.allclose(al.offsets(f_ref, f_lq), o)


def test_config_validation():
    with pytest.raises(ValueError):
        AlignConfig(attention="both")
    with pytest.raises(ValueError):
        AlignConfig(offset_mode="flow")
    with pytest.raises(ValueError):
        AlignConfig(kernel_size=2)
    assert AlignConfig(deform_groups=2).offset_channels() == 36
