import numpy as np
import pytest
import torch

from mixedrc import imgops
from mixedrc.align import AlignConfig
from mixedrc.r3n import (CheckpointError, R3NConfig, init_params, load_checkpoint,
                         parameter_count, save_checkpoint)
from oracles import TINY, gradient_check, make_inputs


@pytest.mark.parametrize("cfg", [TINY, R3NConfig(scale=4, temporal_radius=2, channels=3,
                                                 feat_channels=4, blocks_per_group=1)])
def test_fresh_model_is_bicubic_of_centre(cfg):
    model = init_params(cfg, seed=5)
    lr, ref = make_inputs(cfg)
    out = model(lr, ref)
    expect = imgops.bicubic_resize(lr[:, cfg.temporal_radius], cfg.scale)
    assert torch.equal(out, expect)


def test_output_shape_unbatched_and_range():
    model = init_params(TINY)
    for p in model.parameters():
        p.data.add_(0.3 * torch.randn_like(p))
    lr, ref = make_inputs(TINY, 5, 7, b=1)
    out = model(lr[0], ref[0])
    assert out.shape == (1, 10, 14)
    assert out.min() >= 0 and out.max() <= 1


def test_input_validation():
    model = init_params(TINY)
    lr, ref = make_inputs(TINY)
    with pytest.raises(ValueError, match="LR frames"):
        model(lr[:, :2], ref)
    with pytest.raises(ValueError, match="reference"):
        model(lr, ref[..., :-2])


def test_init_is_seeded_and_does_not_touch_global_rng():
    torch.manual_seed(0)
    a = torch.rand(1)
    torch.manual_seed(0)
    m1 = init_params(TINY, 3)
    b = torch.rand(1)
    m2 = init_params(TINY, 3)
    assert torch.equal(a, b)
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p, q)


def test_config_round_trip():
    cfg = R3NConfig(scale=4, align=AlignConfig(attention="none", offset_mode="stacked"))
    assert R3NConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        R3NConfig(scale=3)


def test_checkpoint_round_trip(tmp_path):
    model = init_params(TINY, 2)
    for p in model.parameters():
        p.data.add_(0.1 * torch.randn_like(p))
    path = tmp_path / "m.r3n"
    save_checkpoint(model, path, {"note": "x"})
    loaded, cfg = load_checkpoint(path)
    assert cfg == TINY and loaded.seed == 2 and loaded.extra == {"note": "x"}
    lr, ref = make_inputs(TINY)
    assert torch.equal(model(lr, ref), loaded(lr, ref))
    save_checkpoint(loaded, tmp_path / "again.r3n", {"note": "x"})
    assert path.read_bytes() == (tmp_path / "again.r3n").read_bytes()


def test_checkpoint_corruption_is_detected(tmp_path):
    path = tmp_path / "m.r3n"
    save_checkpoint(init_params(TINY), path)
    data = path.read_bytes()
    (tmp_path / "magic.r3n").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(tmp_path / "magic.r3n")
    (tmp_path / "short.r3n").write_bytes(data[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.r3n")


def test_parameter_count_scales_with_width():
    small = parameter_count(init_params(TINY))
    wide = parameter_count(init_params(R3NConfig(**{**TINY.to_dict(), "feat_channels": 8})))
    assert wide > small > 0


def test_restore_numpy_interface():
    model = init_params(TINY)
    lr, ref = make_inputs(TINY)
    out = model.restore(lr.numpy(), ref.numpy())
    assert isinstance(out, np.ndarray) and out.dtype == np.float32


def test_gradients_match_finite_differences():
    rows = gradient_check()
    modules = {name.split(".")[0] for name, _, _ in rows}
    assert {"head_lr", "head_ref", "extract", "align_ref", "align_nbr", "fuse", "reconstruct",
            "tail"} <= modules
    for name, a, n in rows:
        assert abs(a - n) <= 1e-3 * max(abs(a), abs(n)) + 1e-8, (name, a, n)
