"""Minibatch training with validation, early stopping and resumable state."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from attnvo.data.dataset import Sequence, load_dataset
from attnvo.data.images import (
    ChannelStats,
    RunningChannelStats,
    augment_image,
    normalize_image,
    resize_bilinear,
)
from attnvo.data.segments import segment_trajectory
from attnvo.nn.model import EVAL, TRAIN, ParameterSet, Tape, backward, init_parameters, model_forward, update_running_stats
from attnvo.training.checkpoint import Checkpoint
from attnvo.training.config import TrainConfig
from attnvo.training.loss import loss_mse_grad, per_segment_loss
from attnvo.training.optim import OptimizerState, adagrad_step, clip_by_global_norm

log = logging.getLogger(__name__)

# stream ids mixed into per-epoch seeds
_SHUFFLE, _DROPOUT, _AUGMENT, _SEGMENTS = 0, 1, 2, 3


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)

    def losses(self) -> list[tuple[float, float]]:
        return [(r.train_loss, r.val_loss) for r in self.history]


@dataclass
class PreparedSplit:
    """Resized (not yet normalised) images plus the segment index of one split."""

    images: list[np.ndarray]  # per sequence: (N, H, W, 3)
    segments: list[tuple[int, int, int]]  # (sequence, start, length)
    motions: list[np.ndarray]  # per segment: (length - 1, 6)

    def __len__(self) -> int:
        return len(self.segments)


def resize_sequence(seq: Sequence, size: tuple[int, int]) -> np.ndarray:
    return np.stack([resize_bilinear(f.image, size) for f in seq.frames]).astype(np.float32)


def dataset_stats(images: list[np.ndarray]) -> ChannelStats:
    acc = RunningChannelStats()
    for arr in images:
        for img in arr:
            acc.update(img)
    return acc.result()


def prepare_split(seqs: list[Sequence], cfg: TrainConfig, seed_stream: int) -> PreparedSplit:
    images, segments, motions = [], [], []
    for k, seq in enumerate(seqs):
        arr = resize_sequence(seq, cfg.model.image_size)
        images.append(arr)
        rng = np.random.default_rng([cfg.seed, _SEGMENTS, seed_stream, k])
        for seg in segment_trajectory(
            seq.trajectory, seq.frames, cfg.segment_min, cfg.segment_max, cfg.segment_stride, rng
        ):
            segments.append((k, seg.start, len(seg)))
            motions.append(seg.motion_array())
    return PreparedSplit(images, segments, motions)


def make_batches(n_by_length: dict[int, list[int]], batch_size: int, rng: np.random.Generator | None):
    """Batches of equal-length segments; shuffled within lengths and across batches when ``rng`` is given."""
    batches = []
    for length in sorted(n_by_length):
        ids = np.array(n_by_length[length])
        if rng is not None:
            ids = rng.permutation(ids)
        batches += [ids[i : i + batch_size].tolist() for i in range(0, len(ids), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def group_by_length(split: PreparedSplit) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, (_, _, length) in enumerate(split.segments):
        out.setdefault(length, []).append(i)
    return out


def assemble_batch(
    split: PreparedSplit,
    ids: list[int],
    stats: ChannelStats,
    cfg: TrainConfig,
    aug_seed: tuple | None = None,
):
    """Stack normalised (B, L, 3, H, W) images and (B, L-1, 6) targets for the given segments."""
    imgs, gts = [], []
    for i in ids:
        k, s, length = split.segments[i]
        clip = split.images[k][s : s + length]
        if aug_seed is not None:
            rng = np.random.default_rng([*aug_seed, i])
            clip = np.stack([augment_image(f, cfg.augment, rng, stats.mean)[0] for f in clip])
        imgs.append(normalize_image(clip, stats))
        gts.append(split.motions[i])
    x = np.stack(imgs).transpose(0, 1, 4, 2, 3)
    return np.ascontiguousarray(x, dtype=cfg.model.np_dtype), np.stack(gts).astype(cfg.model.np_dtype)


def evaluate_split(params: ParameterSet, split: PreparedSplit, stats: ChannelStats, cfg: TrainConfig) -> float:
    """Mean per-segment loss in eval mode, no augmentation."""
    if not len(split):
        return float("nan")
    total = 0.0
    for ids in make_batches(group_by_length(split), cfg.batch_size, None):
        x, gt = assemble_batch(split, ids, stats, cfg)
        pred = model_forward(x, params, EVAL)
        total += float(per_segment_loss(pred, gt, cfg.rotation_weight).sum())
    return total / len(split)


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_seconds:.3f}"])


def read_history_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["wall_seconds"]))
        for r in rows
    ]


def train(
    cfg: TrainConfig,
    dataset: dict[str, list[Sequence]] | None = None,
    resume: Checkpoint | None = None,
    history_path=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    if dataset is None:
        if not cfg.data_root:
            raise ValueError("no dataset given and cfg.data_root is empty")
        dataset = load_dataset(cfg.data_root)
    train_seqs = dataset.get(cfg.train_split, [])
    val_seqs = dataset.get(cfg.val_split, [])
    if not train_seqs:
        raise ValueError(f"split {cfg.train_split!r} is empty")
    if cfg.monitor == "val" and not val_seqs:
        raise ValueError(f"monitoring validation loss but split {cfg.val_split!r} is empty")

    train_split = prepare_split(train_seqs, cfg, 0)
    val_split = prepare_split(val_seqs, cfg, 1)
    if not len(train_split):
        raise ValueError("training split yields no segments")

    if resume is None:
        stats = dataset_stats(train_split.images)
        params = init_parameters(cfg.model, cfg.seed)
        opt = OptimizerState.for_params(params)
        start, best_loss, stale, best_params = 1, float("inf"), 0, params.copy()
    else:
        stats = resume.stats
        params = resume.params.copy()
        opt = resume.optimizer.copy()
        start, best_loss, stale = resume.epoch + 1, resume.best_loss, resume.stale_epochs
        best_params = (resume.best_params or resume.params).copy()
    best_epoch = start - 1

    by_length = group_by_length(train_split)
    history: list[EpochRecord] = []
    earlier: list[EpochRecord] = []
    if resume is not None and history_path is not None and Path(history_path).exists():
        earlier = [r for r in read_history_csv(history_path) if r.epoch < start]
    epoch = start - 1
    tape = Tape()
    for epoch in range(start, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE, epoch])
        total = 0.0
        for b, ids in enumerate(make_batches(by_length, cfg.batch_size, shuffle_rng)):
            aug_seed = (cfg.seed, _AUGMENT, epoch) if cfg.augment_enabled else None
            x, gt = assemble_batch(train_split, ids, stats, cfg, aug_seed)
            drop_rng = np.random.default_rng([cfg.seed, _DROPOUT, epoch, b])
            pred = model_forward(x, params, TRAIN, drop_rng, tape)
            seg_loss = per_segment_loss(pred, gt, cfg.rotation_weight)
            if not np.all(np.isfinite(seg_loss)) or not np.all(np.isfinite(pred)):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            total += float(seg_loss.sum())
            grads = backward(loss_mse_grad(pred, gt, cfg.rotation_weight), tape, params)
            if cfg.grad_clip > 0:
                grads = clip_by_global_norm(grads, cfg.grad_clip)
            adagrad_step(params, grads, opt, cfg.learning_rate)
            update_running_stats(params, tape)
        train_loss = total / len(train_split)
        val_loss = evaluate_split(params, val_split, stats, cfg)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")

        monitored = val_loss if cfg.monitor == "val" else train_loss
        if monitored < best_loss:
            best_loss, stale, best_epoch = monitored, 0, epoch
            best_params = params.copy()
        else:
            stale += 1
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, train_loss, val_loss, rec.wall_seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if history_path is not None:
            write_history_csv(earlier + history, history_path)
        if stale >= cfg.early_stop_patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    rng_state = {"seed": cfg.seed, "epoch": epoch}
    last = Checkpoint(cfg, params, opt, epoch, best_loss, stats, stale, rng_state, best_params)
    best = Checkpoint(cfg, best_params.copy(), opt.copy(), best_epoch, best_loss, stats, stale, rng_state)
    return TrainResult(best, last, history)
