"""Sliding-window inference over full sequences and assembly into one trajectory.

Window ranges are inclusive ``(start, end)`` frame indices. A window of
``n`` frames yields ``n - 1`` motions, one per consecutive pair. Pairs
already covered by an earlier window are never replaced by a later one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from attnvo.data.images import ChannelStats, normalize_image, resize_bilinear
from attnvo.geometry import MotionVector, Pose, Trajectory, accumulate
from attnvo.nn.model import EVAL, ParameterSet, model_forward


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    size: int = 30
    overlap: int = 15

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"window size must be >= 2, got {self.size}")
        if not 0 <= self.overlap < self.size:
            raise ValueError(f"overlap must lie in [0, size), got {self.overlap}")

    @property
    def stride(self) -> int:
        return self.size - self.overlap


def sliding_windows(n_frames: int, cfg: WindowConfig) -> list[tuple[int, int]]:
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    out = []
    start = 0
    while True:
        end = min(start + cfg.size, n_frames) - 1
        out.append((start, end))
        if end == n_frames - 1:
            return out
        start += cfg.stride


def new_pairs(windows: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """For each window, the half-open range of window-local pair positions it contributes."""
    covered = 0  # pairs [0, covered) are already assigned
    out = []
    for s, e in windows:
        lo = max(covered, s)
        out.append((lo - s, e - s))
        covered = max(covered, e)
    return out


def assemble(
    window_predictions: Sequence[Sequence], cfg: WindowConfig, n_frames: int | None = None
) -> list[MotionVector]:
    """Stitch per-window motion lists into one list of ``n_frames - 1`` motions."""
    if not window_predictions:
        raise AssemblyError("no window predictions")
    if n_frames is None:
        k = len(window_predictions)
        n_frames = (k - 1) * cfg.stride + len(window_predictions[-1]) + 1
    windows = sliding_windows(n_frames, cfg)
    if len(windows) != len(window_predictions):
        raise AssemblyError(
            f"{len(window_predictions)} windows supplied, {len(windows)} expected for {n_frames} frames"
        )
    out: list[MotionVector] = []
    for (s, e), (lo, hi), preds in zip(windows, new_pairs(windows), window_predictions):
        if len(preds) != e - s:
            raise AssemblyError(
                f"window starting at frame {s} supplied {len(preds)} motions, expected {e - s}"
            )
        if s + lo != len(out):
            raise AssemblyError(f"coverage gap at frame {len(out)}")
        for m in preds[lo:hi]:
            out.append(m if isinstance(m, MotionVector) else MotionVector.from_array(m))
    if len(out) != n_frames - 1:
        raise AssemblyError(f"assembled {len(out)} motions, expected {n_frames - 1} (frame {len(out)})")
    return out


def network_model(images: np.ndarray, params: ParameterSet) -> np.ndarray:
    """Eval-mode forward; the default model for :func:`infer_trajectory`."""
    return model_forward(images, params, EVAL)


Model = Callable[[np.ndarray, ParameterSet], np.ndarray]


def frames_to_array(frames) -> np.ndarray:
    """Frames (objects with ``.image`` HxWx3, or an (N, H, W, 3) array) -> (N, 3, H, W)."""
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        arr = np.stack([f.image for f in frames])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def prepare_image(image: np.ndarray, stats: ChannelStats, size: tuple[int, int]) -> np.ndarray:
    """HxWx3 image in [0, 1] -> resized, normalised (3, H', W') float32 model input."""
    img = resize_bilinear(np.asarray(image, dtype=np.float32), size)
    return np.ascontiguousarray(normalize_image(img, stats).astype(np.float32).transpose(2, 0, 1))


def prepare_frames(frames, stats: ChannelStats, size: tuple[int, int]) -> np.ndarray:
    """Frames (or raw HxWx3 arrays) -> (N, H', W', 3) resized, normalised images for :func:`infer_trajectory`."""
    return np.stack([prepare_image(getattr(f, "image", f), stats, size).transpose(1, 2, 0) for f in frames])


def predict_windows(model: Model, params, images: np.ndarray, cfg: WindowConfig) -> list[np.ndarray]:
    """Run ``model`` on every window of (N, 3, H, W) images; each result is (len - 1, 6)."""
    out = []
    for s, e in sliding_windows(len(images), cfg):
        pred = np.asarray(model(images[None, s : e + 1], params))
        out.append(pred.reshape(e - s, 6))
    return out


def infer_trajectory(
    model: Model | None,
    params,
    frames,
    cfg: WindowConfig = WindowConfig(),
    initial: Pose | None = None,
    frame_period: float = 0.1,
) -> Trajectory:
    """Frames must already be normalised with the training channel statistics."""
    model = network_model if model is None else model
    images = frames_to_array(frames)
    if len(images) < 2:
        raise ValueError(f"need at least 2 frames, got {len(images)}")
    preds = predict_windows(model, params, images, cfg)
    motions = assemble([[MotionVector.from_array(v) for v in p] for p in preds], cfg, len(images))
    return accumulate(initial or Pose.identity(), motions, frame_period)
