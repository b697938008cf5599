"""Training loop, plateau learning-rate schedule and easy-to-hard curriculum."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import texture
from ..evaluation import psnr
from ..r3n import R3N, R3NConfig, init_params, load_checkpoint, save_checkpoint
from .scenes import MotionSpec
from .synth import collate, make_sample, synth_dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    betas: tuple = (0.9, 0.999)
    batch_size: int = 16
    patch_size: int = 192
    plateau_patience: int = 5
    lambda_distan: float = 0.1
    loss_p: int = 1
    surrogate_k: float = 2000.0
    qp: int = 37
    curriculum: tuple = (8, 16, 24, 32)
    steps_per_stage: int = 1000
    eval_every: int = 100
    val_size: int = 32
    val_seed: int = 10_000
    seed: int = 0
    cosine: bool = False
    workers: int = 0
    motion: MotionSpec = field(default_factory=MotionSpec)

    def __post_init__(self):
        self.curriculum = tuple(int(d) for d in self.curriculum)
        self.betas = tuple(self.betas)
        if isinstance(self.motion, dict):
            self.motion = MotionSpec(**self.motion)
        if any(abs(b) < abs(a) for a, b in zip(self.curriculum, self.curriculum[1:])):
            raise ValueError("curriculum must be non-decreasing in |d|")
        if min(self.lr0, self.batch_size, self.patch_size, self.plateau_patience) <= 0:
            raise ValueError("lr0, batch_size, patch_size and plateau_patience must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Full-scale settings and the reduced preset that runs on one CPU core.
FULL_SCALE = TrainConfig()
# Desk scenes drift at a third of the default speed so that even d=32 stays
# within reach of the small aligner.
DESK = TrainConfig(lr0=1e-3, batch_size=4, patch_size=64, steps_per_stage=150,
                   eval_every=50, val_size=16, cosine=True,
                   motion=MotionSpec(max_speed=0.25))


def desk_model_config(scale: int = 2, channels: int = 1) -> R3NConfig:
    from ..align import AlignConfig
    return R3NConfig(
        scale=scale, temporal_radius=1 if scale == 2 else 2, channels=channels,
        feat_channels=16, n_resgroups_extract=1, n_resgroups_reconstruct=1,
        blocks_per_group=2,
        align=AlignConfig(n_refiners=1, blocks_per_refiner=1, generator_blocks=1),
    )


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------

class PlateauSchedule:
    """Halve the learning rate after ``patience`` evaluations without improvement."""

    def __init__(self, lr0: float, patience: int = 5, factor: float = 0.5):
        self.lr = lr0
        self.patience = patience
        self.factor = factor
        self.best = float("inf")
        self.stale = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


def lr_schedule(history, lr0: float = 1e-4, patience: int = 5) -> float:
    """Learning rate after replaying a validation-loss ``history``."""
    sched = PlateauSchedule(lr0, patience)
    for v in history:
        sched.step(v)
    return sched.lr


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def loss_config(model_cfg: R3NConfig, cfg: TrainConfig) -> texture.LossConfig:
    return texture.LossConfig(p=cfg.loss_p, lambda_distan=cfg.lambda_distan,
                              surrogate_k=cfg.surrogate_k, scale=model_cfg.scale)


def batch_tensors(batch: dict, dtype=torch.float32):
    return (torch.as_tensor(batch["lr"], dtype=dtype),
            torch.as_tensor(batch["ref"], dtype=dtype),
            torch.as_tensor(batch["gt"], dtype=dtype))


def compute_loss(model: R3N, batch: dict, lcfg: texture.LossConfig):
    dtype = next(model.parameters()).dtype
    lr, ref, gt = batch_tensors(batch, dtype)
    pred = model(lr, ref)
    l1 = (pred - gt).abs().mean()
    centre = lr[:, model.cfg.temporal_radius]
    l_distan = texture.soft_disentangled_loss(centre, pred, gt, lcfg)
    total = l1 + lcfg.lambda_distan * l_distan
    return total, l1, l_distan, pred


class NonFiniteLoss(FloatingPointError):
    pass


def train_step(model: R3N, opt: torch.optim.Optimizer, batch: dict,
               lcfg: texture.LossConfig) -> dict:
    """One Adam update on ``l1 + lambda * soft disentangled loss``."""
    model.train()
    total, l1, l_distan, _ = compute_loss(model, batch, lcfg)
    if not torch.isfinite(total):
        raise NonFiniteLoss(
            f"non-finite loss {total.item()} (l1={l1.item()}, l_distan={l_distan.item()}); "
            f"sample seeds {batch['seeds']}"
        )
    opt.zero_grad()
    total.backward()
    opt.step()
    return {"l1": l1.item(), "l_distan": l_distan.item(), "total": total.item()}


def step_batch(cfg: TrainConfig, model_cfg: R3NConfig, stage: int, step: int,
               d_max: int) -> dict:
    seeds = np.random.SeedSequence([cfg.seed, stage, step]).generate_state(cfg.batch_size)
    return collate([make_sample(int(s), cfg.patch_size, model_cfg.scale, cfg.qp,
                                model_cfg.temporal_radius, d_max=d_max,
                                channels=model_cfg.channels, motion=cfg.motion)
                    for s in seeds])


def _batch_job(job):
    return step_batch(*job)


def batches(cfg: TrainConfig, model_cfg: R3NConfig, stage: int, steps: int, d_max: int):
    """Yield the batches of one stage, in order.

    With ``cfg.workers > 0`` they are generated by a process pool a few steps
    ahead; every batch depends only on ``(seed, stage, step)`` so the stream
    is identical either way.
    """
    jobs = ((cfg, model_cfg, stage, step, d_max) for step in range(steps))
    if cfg.workers <= 0:
        yield from map(_batch_job, jobs)
        return
    import multiprocessing as mp
    from collections import deque
    depth = 2 * cfg.workers
    with mp.get_context("spawn").Pool(cfg.workers) as pool:
        pending = deque()
        for job in jobs:
            pending.append(pool.apply_async(_batch_job, (job,)))
            if len(pending) >= depth:
                yield pending.popleft().get()
        while pending:
            yield pending.popleft().get()


def validation_set(cfg: TrainConfig, model_cfg: R3NConfig) -> dict:
    samples = list(synth_dataset(cfg.val_size, cfg.patch_size, model_cfg.scale, cfg.qp,
                                 model_cfg.temporal_radius, seed=cfg.val_seed,
                                 channels=model_cfg.channels, motion=cfg.motion,
                                 gop_protocol=True))
    return collate(samples)


@torch.no_grad()
def evaluate(model: R3N, val: dict, lcfg: texture.LossConfig) -> dict:
    """Mean PSNR, l1 and sign-map disagreements on a held-out batch."""
    model.eval()
    total, l1, l_distan, pred = compute_loss(model, val, lcfg)
    pred = pred.numpy()
    centre = val["lr"][:, model.cfg.temporal_radius]
    return {
        "psnr": float(np.mean([psnr(p, g) for p, g in zip(pred, val["gt"])])),
        "l1": l1.item(),
        "total": total.item(),
        "sign_disagreements": texture.sign_disagreements(centre, pred, val["gt"], lcfg),
    }


class MetricsLog:
    """JSON-lines metrics sink; no-op without a path."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, **row) -> None:
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(row) + "\n")


def train_stage(model: R3N, cfg: TrainConfig, d_max: int, steps: int, stage: int = 0,
                val: dict | None = None, metrics: MetricsLog | None = None,
                history: list | None = None) -> dict:
    """Train ``model`` in place for ``steps`` steps with references within ``d_max``."""
    lcfg = loss_config(model.cfg, cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=cfg.betas)
    sched = PlateauSchedule(cfg.lr0, cfg.plateau_patience)
    cosine = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps) if cfg.cosine else None)
    metrics = metrics or MetricsLog()
    last = {}
    for step, batch in enumerate(batches(cfg, model.cfg, stage, steps, d_max)):
        last = train_step(model, opt, batch, lcfg)
        if history is not None:
            history.append(last["total"])
        lr_now = opt.param_groups[0]["lr"]
        if cosine is not None:
            cosine.step()
        metrics.write(stage=stage, step=step, d_max=d_max, lr=lr_now, **last)
        if val is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            ev = evaluate(model, val, lcfg)
            metrics.write(stage=stage, step=step, eval=ev)
            if cosine is None:
                for g in opt.param_groups:
                    g["lr"] = sched.step(ev["l1"])
    return last


def run_training(cfg: TrainConfig, model_cfg: R3NConfig, d_max: int | None = None,
                 steps: int | None = None, out_dir=None, model: R3N | None = None) -> tuple:
    """Single-stage training; returns ``(model, validation metrics)``."""
    torch.manual_seed(cfg.seed)
    model = model or init_params(model_cfg, cfg.seed)
    d_max = cfg.curriculum[-1] if d_max is None else d_max
    steps = steps or cfg.steps_per_stage * len(cfg.curriculum)
    val = validation_set(cfg, model_cfg)
    metrics = MetricsLog(Path(out_dir) / "metrics.jsonl" if out_dir else None)
    train_stage(model, cfg, d_max, steps, 0, val, metrics)
    ev = evaluate(model, val, loss_config(model_cfg, cfg))
    if out_dir:
        save_checkpoint(model, Path(out_dir) / "final.r3n", {"train": cfg.to_dict()})
    return model, ev


def run_curriculum(cfg: TrainConfig, model_cfg: R3NConfig, out_dir=None) -> tuple:
    """Train one stage per ``cfg.curriculum`` entry, each warm-started from the last.

    Returns ``(model, report)`` where ``report`` has one row per stage.
    """
    torch.manual_seed(cfg.seed)
    out = Path(out_dir) if out_dir else None
    model = init_params(model_cfg, cfg.seed)
    val = validation_set(cfg, model_cfg)
    lcfg = loss_config(model_cfg, cfg)
    metrics = MetricsLog(out / "metrics.jsonl" if out else None)
    report = []
    for stage, d_max in enumerate(cfg.curriculum):
        tic = time.perf_counter()
        train_stage(model, cfg, d_max, cfg.steps_per_stage, stage, val, metrics)
        ev = evaluate(model, val, lcfg)
        row = {"stage": stage, "d_max": d_max, "steps": cfg.steps_per_stage,
               "seconds": round(time.perf_counter() - tic, 2), **ev}
        if out:
            ckpt = out / f"stage{stage}_d{d_max}.r3n"
            save_checkpoint(model, ckpt, {"stage": row})
            model, _ = load_checkpoint(ckpt)
            row["checkpoint"] = str(ckpt)
        log.info("stage %d (d<=%d): val PSNR %.3f dB", stage, d_max, ev["psnr"])
        report.append(row)
    if out:
        (out / "curriculum_report.json").write_text(json.dumps(report, indent=2))
    return model, report
