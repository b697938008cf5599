"""Synthetic data, training loop and curriculum."""
from .loop import (DESK, FULL_SCALE, MetricsLog, NonFiniteLoss, PlateauSchedule, TrainConfig,
                   compute_loss, desk_model_config, evaluate, lr_schedule, run_curriculum,
                   run_training, train_stage, train_step, validation_set)
from .scenes import MotionSpec, Scene
from .synth import Sample, degrade, make_sample, synth_clip, synth_dataset

__all__ = [
    "DESK", "FULL_SCALE", "MetricsLog", "MotionSpec", "NonFiniteLoss", "PlateauSchedule",
    "Sample", "Scene", "TrainConfig", "compute_loss", "degrade", "desk_model_config", "evaluate",
    "lr_schedule", "make_sample", "run_curriculum", "run_training", "synth_clip",
    "synth_dataset", "train_stage", "train_step", "validation_set",
]
