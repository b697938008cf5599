import numpy as np
import pytest
import torch

from mixedrc import imgops, texture
from mixedrc.texture import LossConfig
from oracles import hand_map

X = np.array([[[0.8, 0.5], [0.5, 0.5]]])
Y = np.array([[[0.6, 0.5], [0.5, 0.3]]])
Y_HAT = np.array([[[0.9, 0.5], [0.5, 0.3]]])
HAND = LossConfig(scale=1, ksize=3)


def test_hand_case_maps():
    assert hand_map(Y, X).tolist() == [[1, 0], [0, -1]]
    assert hand_map(Y_HAT, X).tolist() == [[-1, 0], [0, -1]]
    assert texture.analysis_map(Y, X, HAND)[0].tolist() == [[1, 0], [0, -1]]
    assert texture.analysis_map(Y_HAT, X, HAND)[0].tolist() == [[-1, 0], [0, -1]]


def test_hand_case_loss():
    assert abs(texture.disentangled_loss(X, Y_HAT, Y, HAND) - 0.5) <= 1e-12


def test_hand_case_p2_is_root_mean_square():
    cfg = LossConfig(p=2, scale=1, ksize=3)
    assert abs(texture.disentangled_loss(X, Y_HAT, Y, cfg) - 1.0) <= 1e-12


def test_single_lr_pixel_at_scale_two_is_flat():
    # a 1x1 LR frame upsamples to a constant, so the low-pass residual vanishes
    d = texture.analysis_map(np.random.default_rng(0).random((1, 2, 2)), X[:, :1, :1])
    assert not d.any()


def test_zero_map_cases(rng):
    x = rng.random((1, 8, 8))
    assert not texture.analysis_map(imgops.bicubic_resize(x, 2), x).any()
    assert not texture.analysis_map(rng.random((1, 16, 16)), np.full((1, 8, 8), 0.4)).any()


def test_codomain_and_dtype(rng):
    for _ in range(50):
        d = texture.analysis_map(rng.random((1, 12, 12)), rng.random((1, 6, 6)))
        assert d.dtype == np.int8
        assert set(np.unique(d)) <= {-1, 0, 1}
    t = texture.analysis_map(torch.rand(2, 1, 8, 8), torch.rand(2, 1, 4, 4))
    assert isinstance(t, torch.Tensor) and t.shape == (2, 1, 8, 8)


def test_map_depends_on_y_only_through_residual(rng):
    x, y = rng.random((1, 6, 6)), rng.random((1, 12, 12))
    x_up, r_lp = texture.lowpass_residual(x)
    explicit = texture.sign_map_from_residuals(torch.from_numpy(y) - x_up, r_lp)
    assert np.array_equal(explicit.numpy().astype(np.int8), texture.analysis_map(y, x))


def test_luma_mode_gives_single_channel(rng):
    d = texture.analysis_map(rng.random((3, 8, 8)), rng.random((3, 4, 4)))
    assert d.shape == (1, 8, 8)
    d = texture.analysis_map(rng.random((3, 8, 8)), rng.random((3, 4, 4)),
                             LossConfig(luma_only=False))
    assert d.shape == (3, 8, 8)


def test_shape_errors(rng):
    with pytest.raises(ValueError, match="not 2x"):
        texture.analysis_map(rng.random((1, 10, 12)), rng.random((1, 6, 6)))
    with pytest.raises(ValueError, match="shape mismatch"):
        texture.disentangled_loss(rng.random((1, 4, 4)), rng.random((1, 8, 8)),
                                  rng.random((1, 8, 6)))


def test_loss_identity_symmetry_and_range(rng):
    x, y, z = rng.random((1, 8, 8)), rng.random((1, 16, 16)), rng.random((1, 16, 16))
    assert texture.disentangled_loss(x, y, y) == 0.0
    assert texture.disentangled_loss(x, y, z) == texture.disentangled_loss(x, z, y)
    assert 0.0 <= texture.disentangled_loss(x, y, z) <= 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(p=3)
    with pytest.raises(ValueError):
        LossConfig(surrogate_k=0)
    with pytest.raises(ValueError):
        LossConfig(lambda_distan=-1)


def test_soft_loss_saturates_to_hard(rng):
    x = torch.from_numpy(rng.random((1, 8, 8)))
    y = torch.from_numpy(rng.random((1, 16, 16)))
    soft = texture.soft_disentangled_loss(x, y, y, LossConfig(surrogate_k=1e7)).item()
    assert abs(soft - texture.disentangled_loss(x, y, y)) <= 0.05


def test_soft_loss_approaches_hard_as_k_grows(rng):
    x = torch.from_numpy(rng.random((1, 8, 8)))
    y, yh = torch.from_numpy(rng.random((1, 16, 16))), torch.from_numpy(rng.random((1, 16, 16)))
    hard = texture.disentangled_loss(x, yh, y)
    gaps = [abs(texture.soft_disentangled_loss(x, yh, y, LossConfig(surrogate_k=k)).item() - hard)
            for k in (5, 50)]
    assert gaps[1] <= gaps[0]


def test_soft_loss_gradient_matches_finite_differences(rng):
    cfg = LossConfig(surrogate_k=50.0, scale=1)
    x = torch.from_numpy(rng.random((1, 8, 8)))
    y = torch.from_numpy(rng.random((1, 8, 8)))
    yh = torch.from_numpy(rng.random((1, 8, 8))).requires_grad_(True)
    texture.soft_disentangled_loss(x, yh, y, cfg).backward()
    grad = yh.grad.clone()
    h = 1e-4
    for idx in np.ndindex(1, 8, 8):
        plus, minus = yh.detach().clone(), yh.detach().clone()
        plus[idx] += h
        minus[idx] -= h
        fd = (texture.soft_disentangled_loss(x, plus, y, cfg)
              - texture.soft_disentangled_loss(x, minus, y, cfg)).item() / (2 * h)
        assert abs(fd - grad[idx].item()) <= 1e-3 * max(abs(fd), 1e-6) + 1e-9


def test_sign_disagreements_counts_pixels():
    assert texture.sign_disagreements(X, Y_HAT, Y, HAND) == 1
    assert texture.sign_disagreements(X, Y, Y, HAND) == 0


def test_render_map_colours():
    rgb = texture.render_map(np.array([[[1, 0, -1]]], dtype=np.int8))
    assert rgb.dtype == np.uint8
    assert rgb[0].tolist() == [[0, 0, 0], [128, 128, 128], [0, 200, 0]]
