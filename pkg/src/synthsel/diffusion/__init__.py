"""Tabular denoising diffusion generator."""

from .mlp import DenoiserMlp
from .model import (CategoricalMode, CheckpointError, CheckpointVersionError, DiffusionModel,
                    DivergenceError, TrainConfig, TrainingError, fine_tune, generate,
                    load_checkpoint, save_checkpoint, train)
from .schedule import (NoiseSchedule, ScheduleKind, make_schedule, q_sample,
                       q_sample_categorical)

__all__ = [
    "CategoricalMode", "CheckpointError", "CheckpointVersionError", "DenoiserMlp",
    "DiffusionModel", "DivergenceError", "NoiseSchedule", "ScheduleKind", "TrainConfig",
    "TrainingError", "fine_tune", "generate", "load_checkpoint", "make_schedule", "q_sample",
    "q_sample_categorical", "save_checkpoint", "train",
]
