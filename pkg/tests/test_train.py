import dataclasses
import json

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from mixedrc.align import AlignConfig
from mixedrc.r3n import R3NConfig, init_params, load_checkpoint
from mixedrc.train import (DESK, FULL_SCALE, MetricsLog, MotionSpec, NonFiniteLoss,
                           PlateauSchedule, Scene, compute_loss, desk_model_config, evaluate,
                           lr_schedule, make_sample, run_curriculum, run_training, synth_dataset,
                           train_stage, train_step, validation_set)
from mixedrc.train.loop import batches, loss_config, step_batch
from mixedrc.train.synth import collate, sample_d

TINY = R3NConfig(feat_channels=8, n_resgroups_extract=1, n_resgroups_reconstruct=1,
                 blocks_per_group=1, align=AlignConfig(n_refiners=1, blocks_per_refiner=1))
QUICK = dataclasses.replace(DESK, batch_size=2, patch_size=16, steps_per_stage=2, eval_every=0,
                            val_size=2, curriculum=(2, 4))


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_presets_follow_documented_values():
    assert (FULL_SCALE.lr0, FULL_SCALE.batch_size, FULL_SCALE.patch_size) == (1e-4, 16, 192)
    assert FULL_SCALE.curriculum == (8, 16, 24, 32) and FULL_SCALE.betas == (0.9, 0.999)
    assert (DESK.batch_size, DESK.patch_size) == (4, 64)


def test_decreasing_history_keeps_lr():
    assert lr_schedule([1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4], 1e-4, 5) == 1e-4


def test_six_flat_evaluations_halve_once():
    assert lr_schedule([1.0] * 6, 1e-4, 5) == 5e-5


@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=60), st.integers(1, 6))
def test_lr_never_increases(history, patience):
    sched = PlateauSchedule(1e-3, patience)
    lrs = [sched.step(v) for v in history]
    assert all(b <= a for a, b in zip([1e-3] + lrs, lrs))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def test_sample_d_range():
    rng = np.random.default_rng(0)
    ds = {sample_d(rng, 3) for _ in range(500)}
    assert ds == {-3, -2, -1, 1, 2, 3}
    assert sample_d(rng, 0) == 0


def test_sample_shapes_and_determinism():
    a = make_sample(7, 24, 2, 37, 1)
    b = make_sample(7, 24, 2, 37, 1)
    assert a.gt_clip.shape == (3, 1, 24, 24)
    assert a.lr_clip.shape == (3, 1, 12, 12)
    assert a.ref_frame.shape == (1, 24, 24)
    assert np.array_equal(a.lr_clip, b.lr_clip) and a.d == b.d
    assert np.array_equal(a.gt, a.gt_clip[1])
    assert make_sample(7, 24, 4, 37, 2, d=-5).d == -5
    with pytest.raises(ValueError):
        make_sample(0, 25, 2, 37, 1)


def test_reference_matches_scene_at_distance_d():
    s = make_sample(3, 32, 2, 37, 1, d=0, ref_qp=0)
    # d = 0: the reference is the target frame coded almost losslessly
    assert np.abs(s.ref_frame - s.gt).max() < 0.02


def test_gop_protocol_distances():
    ds = [s.d for s in synth_dataset(18, 16, gop_protocol=True)]
    assert ds[:3] == [0, -1, -2] and ds[15] == -15 and ds[16] == 0


def test_scene_is_textured_and_moving():
    sc = Scene(np.random.default_rng(0), 32, 32)
    f0, f1 = sc.render(0), sc.render(1)
    assert f0.std() > 0.02 and np.abs(f0 - f1).mean() > 1e-3
    assert sc.render(0, 2).shape == (1, 64, 64)
    assert Scene(np.random.default_rng(0), 8, 8, channels=3).render(0).shape == (3, 8, 8)


# ---------------------------------------------------------------------------
# loss and steps
# ---------------------------------------------------------------------------

def _batch(model_cfg=TINY, seed=0):
    return step_batch(QUICK, model_cfg, 0, seed, 8)


def test_lambda_zero_reduces_to_l1():
    model = init_params(TINY)
    lcfg = loss_config(TINY, dataclasses.replace(QUICK, lambda_distan=0.0))
    total, l1, l_distan, _ = compute_loss(model, _batch(), lcfg)
    assert total.item() == l1.item()
    assert l_distan.item() > 0


def test_untrained_loss_is_positive():
    model = init_params(TINY)
    total, *_ = compute_loss(model, _batch(), loss_config(TINY, QUICK))
    assert total.item() > 0


def test_non_finite_loss_reports_seeds():
    model = init_params(TINY)
    with torch.no_grad():
        model.tail.bias.fill_(float("nan"))
    opt = torch.optim.Adam(model.parameters())
    batch = _batch()
    with pytest.raises(NonFiniteLoss, match=str(batch["seeds"][0])):
        train_step(model, opt, batch, loss_config(TINY, QUICK))


def test_worker_pool_yields_same_batches():
    cfg = dataclasses.replace(QUICK, workers=1)
    a = list(batches(QUICK, TINY, 0, 3, 4))
    b = list(batches(cfg, TINY, 0, 3, 4))
    for x, y in zip(a, b):
        assert np.array_equal(x["lr"], y["lr"]) and x["seeds"] == y["seeds"]


def test_training_reduces_loss_on_toy_config():
    # moving average over 20 steps; threshold calibrated once on this exact setup
    torch.manual_seed(0)
    cfg = dataclasses.replace(DESK, patch_size=32, batch_size=2, lr0=3e-3, cosine=False)
    model = init_params(TINY)
    history = []
    train_stage(model, cfg, 8, 200, history=history)
    first, last = np.mean(history[:20]), np.mean(history[-20:])
    assert last <= 0.8 * first


def test_full_run_determinism(tmp_path):
    run_training(QUICK, TINY, 4, 3, tmp_path / "a")
    run_training(QUICK, TINY, 4, 3, tmp_path / "b")
    assert (tmp_path / "a" / "final.r3n").read_bytes() == (tmp_path / "b" / "final.r3n").read_bytes()


def test_curriculum_report_and_checkpoint_fidelity(tmp_path):
    model, report = run_curriculum(QUICK, TINY, tmp_path)
    assert [r["d_max"] for r in report] == [2, 4]
    assert json.loads((tmp_path / "curriculum_report.json").read_text())[1]["stage"] == 1
    # a reloaded stage checkpoint scores exactly what the in-memory model scored
    val = validation_set(QUICK, TINY)
    reloaded, _ = load_checkpoint(report[0]["checkpoint"])
    ev = evaluate(reloaded, val, loss_config(TINY, QUICK))
    assert ev["total"] == report[0]["total"]
    rows = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert {"stage", "step", "lr", "total", "l1", "l_distan", "d_max"} <= set(rows[0])


def test_warm_start_carries_the_weights(tmp_path):
    # next stage starts from the saved model: same batch, same loss
    cfg = dataclasses.replace(QUICK, curriculum=(4, 4))
    _, report = run_curriculum(cfg, TINY, tmp_path)
    m0, _ = load_checkpoint(report[0]["checkpoint"])
    m_mem = init_params(TINY)
    train_stage(m_mem, cfg, 4, cfg.steps_per_stage, 0)
    b = step_batch(cfg, TINY, 1, 0, 4)
    lcfg = loss_config(TINY, cfg)
    with torch.no_grad():
        assert compute_loss(m0, b, lcfg)[0].item() == compute_loss(m_mem, b, lcfg)[0].item()


@pytest.mark.parametrize("offset_mode", ["refined", "stacked"])
@pytest.mark.parametrize("attention", ["spatial", "channel", "none"])
@pytest.mark.parametrize("lam", [0.1, 0.0])
@pytest.mark.parametrize("curriculum", [True, False])
def test_ablation_grid_cell_trains(offset_mode, attention, lam, curriculum):
    mcfg = dataclasses.replace(TINY, align=dataclasses.replace(
        TINY.align, offset_mode=offset_mode, attention=attention))
    cfg = dataclasses.replace(QUICK, lambda_distan=lam, steps_per_stage=1)
    if curriculum:
        _, report = run_curriculum(cfg, mcfg)
        assert len(report) == 2 and np.isfinite(report[-1]["psnr"])
    else:
        _, ev = run_training(cfg, mcfg, 4, 2)
        assert np.isfinite(ev["psnr"])


def test_metrics_log_without_path_is_noop(tmp_path):
    MetricsLog().write(a=1)
    log = MetricsLog(tmp_path / "x" / "m.jsonl")
    log.write(step=0, total=1.0)
    assert json.loads((tmp_path / "x" / "m.jsonl").read_text()) == {"step": 0, "total": 1.0}


def test_desk_model_config_scales():
    assert desk_model_config(4).temporal_radius == 2
    assert desk_model_config(2, 3).channels == 3
