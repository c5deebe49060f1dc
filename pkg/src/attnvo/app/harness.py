"""Evaluation harnesses shared by the scripts and the acceptance suite.

Covers checkpoint evaluation on clean or corrupted sequences, the
zero-motion baseline, and epoch-to-threshold bookkeeping for the attention
ablation.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence as Seq

import numpy as np

from attnvo.data.dataset import Sequence
from attnvo.data.images import AugmentConfig, corrupt_frames
from attnvo.data.synth import SynthConfig
from attnvo.geometry import Trajectory
from attnvo.metrics import MetricsReport, build_report
from attnvo.nn.model import ModelConfig
from attnvo.training.checkpoint import Checkpoint
from attnvo.training.config import TrainConfig
from attnvo.training.loop import EpochRecord, train
from attnvo.trajectory import WindowConfig, infer_trajectory, prepare_frames

# Synthetic stand-in used by the learning and ablation experiments.
LEARNING_DATA = SynthConfig(trajectory_length=200, image_size=(32, 64))
LEARNING_SEQUENCES = 20


# Narrower than the ModelConfig defaults: at h=32 the model memorises the 14
# training trajectories and validation loss stalls near the mean predictor.
LEARNING_MODEL = ModelConfig(lstm_hidden=16, attn_heads=4, fc_intermediate=32)


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale training setup for the synthetic experiments."""
    base = TrainConfig(learning_rate=0.01, max_epochs=50, seed=0, model=LEARNING_MODEL)
    return dataclasses.replace(base, **overrides)


def predict(ckpt: Checkpoint, seq: Sequence, window: WindowConfig = WindowConfig(), frames=None) -> Trajectory:
    frames = seq.frames if frames is None else frames
    images = prepare_frames(frames, ckpt.stats, ckpt.config.model.image_size)
    return infer_trajectory(None, ckpt.params, images, window, seq.trajectory[0], seq.trajectory.frame_period)


def zero_motion(seq: Sequence) -> Trajectory:
    """Baseline that never moves from the first ground-truth pose."""
    start = seq.trajectory[0]
    return Trajectory(tuple(start for _ in seq.frames), seq.trajectory.frame_period)


def evaluate(
    ckpt: Checkpoint,
    seqs: Seq[Sequence],
    lengths: Seq[float] = (25.0, 50.0, 75.0),
    window: WindowConfig = WindowConfig(),
    corruption: AugmentConfig | None = None,
    seed: int = 0,
) -> list[MetricsReport]:
    """One report per sequence; ``corruption`` switches on augmentation-style damage."""
    out = []
    for k, seq in enumerate(seqs):
        frames = None if corruption is None else corrupt_frames(seq.frames, corruption, seed + k)
        est = predict(ckpt, seq, window, frames)
        out.append(build_report(est, seq.trajectory, lengths, trajectory_id=seq.name))
    return out


@dataclass
class Summary:
    """Errors averaged over sequences (KITTI means skip NaN rows)."""

    trans_pct: float
    rot_deg_per_100m: float
    ate_trans: float
    ate_rot_deg: float

    @classmethod
    def of(cls, reports: Seq[MetricsReport]) -> "Summary":
        mean = lambda xs: float(np.nanmean(xs)) if not all(math.isnan(x) for x in xs) else float("nan")
        return cls(
            mean([r.mean_trans_pct for r in reports]),
            mean([r.mean_rot_deg_per_100m for r in reports]),
            mean([r.ate_trans for r in reports]),
            mean([r.ate_rot_deg for r in reports]),
        )

    def dominates(self, other: "Summary") -> bool:
        """True when every error here is >= the matching error in ``other``."""
        return all(a >= b for a, b in zip(dataclasses.astuple(self), dataclasses.astuple(other)))


def first_epoch_at_or_below(history: Seq[EpochRecord], threshold: float) -> float:
    """First epoch whose validation loss is <= threshold, or inf if none."""
    for rec in history:
        if rec.val_loss <= threshold:
            return float(rec.epoch)
    return math.inf


@dataclass
class AblationRun:
    seed: int
    threshold: float  # best validation loss of the attention-free model
    ablated_epoch: float
    attention_epoch: float
    attention_best: float


def ablation_run(cfg: TrainConfig, dataset, seed: int) -> AblationRun:
    """Train with and without attention from the same seed and compare epochs to the ablated best."""
    with_attn = dataclasses.replace(cfg, seed=seed)
    without = dataclasses.replace(with_attn, model=dataclasses.replace(cfg.model, attn_layers=0))
    h_off = train(without, dataset).history
    h_on = train(with_attn, dataset).history
    threshold = min(r.val_loss for r in h_off)
    return AblationRun(
        seed,
        threshold,
        first_epoch_at_or_below(h_off, threshold),
        first_epoch_at_or_below(h_on, threshold),
        min(r.val_loss for r in h_on),
    )


def median_epochs(runs: Seq[AblationRun]) -> tuple[float, float]:
    """(attention median, ablated median)."""
    return float(np.median([r.attention_epoch for r in runs])), float(np.median([r.ablated_epoch for r in runs]))
