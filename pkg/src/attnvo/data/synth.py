"""Procedural stand-in for a driving dataset.

A smooth random 6-DOF camera path is generated through a cloud of coloured
landmarks, and every frame is rendered as anti-aliased discs seen by a
pinhole camera (focal length = image width, principal point at the centre).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from attnvo.geometry import MotionVector, Pose, Trajectory, compose, motion_to_pose
from attnvo.data.images import Frame

NEAR_PLANE = 0.1


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 1500
    world_extent: float = 8.0
    trajectory_length: int = 200
    motion_smoothness: float = 0.9
    image_size: tuple[int, int] = (32, 64)  # (H, W)
    frame_period: float = 0.1
    seed: int = 0
    # per-step velocity state: (yaw, pitch, roll rates in rad/frame, tx, ty, tz in m/frame)
    initial_velocity: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    cruise_velocity: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.5)
    velocity_noise: tuple = (0.02, 0.001, 0.001, 0.005, 0.002, 0.1)  # car-like: little sideways slip
    landmark_radius: float = 0.2
    background: float = 0.1

    def __post_init__(self):
        if self.n_points <= 0:
            raise ValueError("n_points must be positive")
        if self.trajectory_length < 2:
            raise ValueError("trajectory_length must be >= 2")
        if not 0.0 <= self.motion_smoothness < 1.0:
            raise ValueError("motion_smoothness must lie in [0, 1)")


def generate_velocities(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Low-pass random walk ``v <- s * (v + (1 - s) * cruise + noise)``.

    The stationary mean is ``s * cruise``; ``s = 0`` with zero initial
    velocity gives a static camera.
    """
    s = cfg.motion_smoothness
    cruise = np.asarray(cfg.cruise_velocity, dtype=np.float64)
    sigma = np.asarray(cfg.velocity_noise, dtype=np.float64)
    v = np.asarray(cfg.initial_velocity, dtype=np.float64).copy()
    out = np.empty((cfg.trajectory_length - 1, 6))
    for k in range(cfg.trajectory_length - 1):
        out[k] = v
        v = s * (v + (1 - s) * cruise + sigma * rng.standard_normal(6))
    return out


def trajectory_from_velocities(vel: np.ndarray, frame_period: float = 0.1) -> Trajectory:
    poses = [Pose.identity()]
    for v in vel:
        poses.append(compose(poses[-1], motion_to_pose(MotionVector.from_array(v))))
    return Trajectory(tuple(poses), frame_period)


def sample_landmarks(traj: Trajectory, cfg: SynthConfig, rng: np.random.Generator):
    """Landmarks in a tube around the path; returns (points (n, 3), colours (n, 3))."""
    centres = traj.translations()[rng.integers(0, len(traj), size=cfg.n_points)]
    pts = centres + rng.uniform(-cfg.world_extent, cfg.world_extent, size=(cfg.n_points, 3))
    colours = rng.uniform(0.25, 1.0, size=(cfg.n_points, 3))
    return pts, colours


def intrinsics(image_size: tuple[int, int]) -> tuple[float, float, float]:
    H, W = image_size
    return float(W), W / 2.0, H / 2.0


def project(points: np.ndarray, pose: Pose, image_size: tuple[int, int]):
    """World points -> (pixel coords (n, 2) as (u, v), depth (n,)). ``pose`` is camera-to-world."""
    f, cx, cy = intrinsics(image_size)
    cam = (points - pose.t) @ pose.R
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[:, 0] / z + cx
        v = f * cam[:, 1] / z + cy
    return np.stack([u, v], axis=1), z


def render(points, colours, pose: Pose, cfg: SynthConfig) -> np.ndarray:
    H, W = cfg.image_size
    f = intrinsics(cfg.image_size)[0]
    uv, z = project(points, pose, cfg.image_size)
    radius = f * cfg.landmark_radius / np.maximum(z, NEAR_PLANE)
    radius = np.clip(radius, 0.6, 0.25 * min(H, W))
    keep = (
        (z > NEAR_PLANE)
        & (uv[:, 0] > -radius - 1)
        & (uv[:, 0] < W + radius + 1)
        & (uv[:, 1] > -radius - 1)
        & (uv[:, 1] < H + radius + 1)
    )
    img = np.full((H, W, 3), cfg.background)
    if not np.any(keep):
        return img
    order = np.argsort(-z[keep], kind="stable")  # painter's order, far to near
    for (u, v), r, c in zip(uv[keep][order], radius[keep][order], colours[keep][order]):
        y0, y1 = max(0, int(v - r - 1)), min(H, int(v + r + 2))
        x0, x1 = max(0, int(u - r - 1)), min(W, int(u + r + 2))
        if y0 >= y1 or x0 >= x1:
            continue
        ys = np.arange(y0, y1)[:, None] + 0.5
        xs = np.arange(x0, x1)[None, :] + 0.5
        alpha = np.clip(r + 0.5 - np.hypot(xs - u, ys - v), 0.0, 1.0)[..., None]
        patch = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = patch + alpha * (c - patch)
    return img


def synth_generate(cfg: SynthConfig, dtype=np.float32) -> tuple[Trajectory, list[Frame]]:
    rng = np.random.default_rng(cfg.seed)
    traj = trajectory_from_velocities(generate_velocities(cfg, rng), cfg.frame_period)
    points, colours = sample_landmarks(traj, cfg, rng)
    frames = [
        Frame(i, render(points, colours, p, cfg).astype(dtype), i * cfg.frame_period)
        for i, p in enumerate(traj.poses)
    ]
    return traj, frames
