from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from attnvo.geometry import MotionVector, Pose, Trajectory, pose_to_motion, relative
from attnvo.data.images import Frame


@dataclass
class Segment:
    """Short frame run with motions realigned so the first pose is the origin."""

    frames: list[Frame]
    gt_motions: list[MotionVector]
    start: int = 0
    source: str = ""

    def __post_init__(self):
        if len(self.gt_motions) != len(self.frames) - 1:
            raise ValueError(
                f"segment has {len(self.frames)} frames but {len(self.gt_motions)} motions"
            )

    def __len__(self) -> int:
        return len(self.frames)

    def motion_array(self) -> np.ndarray:
        return np.stack([m.as_array() for m in self.gt_motions])


def segment_trajectory(
    traj: Trajectory,
    frames: Sequence[Frame],
    min_len: int = 5,
    max_len: int = 7,
    stride: int = 1,
    rng: np.random.Generator | None = None,
    source: str = "",
) -> list[Segment]:
    """Cut a trajectory into segments whose lengths are drawn uniformly from [min_len, max_len].

    A segment whose drawn length would run past the end is shortened to what
    remains, provided that is still at least ``min_len``.
    """
    if not 2 <= min_len <= max_len:
        raise ValueError(f"need 2 <= min_len <= max_len, got {min_len}, {max_len}")
    if len(traj) != len(frames):
        raise ValueError(f"{len(traj)} poses but {len(frames)} frames")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(traj)
    steps = [pose_to_motion(relative(a, b)) for a, b in zip(traj.poses[:-1], traj.poses[1:])]
    segments = []
    for s in range(0, n - min_len + 1, stride):
        length = min(int(rng.integers(min_len, max_len + 1)), n - s)
        segments.append(Segment(list(frames[s : s + length]), steps[s : s + length - 1], s, source))
    return segments
