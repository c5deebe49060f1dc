"""KITTI-style pose files and the Mid-Air body-frame conversion."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from attnvo.geometry import ORTHO_TOL, Pose, Trajectory, orthonormalize

log = logging.getLogger(__name__)

# Rows of the body (NED: x forward, y right, z down) -> camera (x right, y down, z forward) map.
MIDAIR_TO_CAMERA = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)

WARN_TOL = 1e-6
REJECT_TOL = 1e-3


class PoseFileError(ValueError):
    """Malformed or physically invalid pose file."""


def parse_pose_line(line: str, lineno: int = 0) -> Pose:
    parts = line.split()
    if len(parts) != 12:
        raise PoseFileError(f"line {lineno}: expected 12 values, got {len(parts)}")
    try:
        vals = np.array([float(x) for x in parts])
    except ValueError as e:
        raise PoseFileError(f"line {lineno}: {e}") from None
    if not np.all(np.isfinite(vals)):
        raise PoseFileError(f"line {lineno}: non-finite value")
    m = np.eye(4)
    m[:3, :] = vals.reshape(3, 4)
    R = m[:3, :3]
    err = float(np.max(np.abs(R.T @ R - np.eye(3))))
    if err > REJECT_TOL or np.linalg.det(R) <= 0:
        raise PoseFileError(f"line {lineno}: rotation is not orthonormal (error {err:.3g})")
    if err > WARN_TOL:
        log.warning("line %d: rotation orthonormality error %.3g, correcting", lineno, err)
    if err > ORTHO_TOL:
        m[:3, :3] = orthonormalize(R)
    return Pose(m)


def format_pose_line(p: Pose) -> str:
    return " ".join(repr(float(v)) for v in p.matrix[:3, :].ravel())


def load_pose_file(path, frame_period: float = 0.1) -> Trajectory:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            poses.append(parse_pose_line(line, lineno))
    if not poses:
        raise PoseFileError(f"{path}: no poses")
    return Trajectory(tuple(poses), frame_period)


def save_pose_file(traj: Trajectory, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for p in traj.poses:
            fh.write(format_pose_line(p) + "\n")


def midair_to_camera_frame(p: Pose) -> Pose:
    C = MIDAIR_TO_CAMERA
    return Pose(C @ p.matrix @ C.T)
