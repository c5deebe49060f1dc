"""SE(3) pose algebra.

Poses are 4x4 homogeneous camera-to-world transforms. Relative motions are
6-vectors ``(phi_y, phi_x, phi_z, tx, ty, tz)`` where the angles are intrinsic
Tait-Bryan rotations applied in the order y, x', z''.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ORTHO_TOL = 1e-9
GIMBAL_COS_TOL = 1e-7


class GeometryError(ValueError):
    """Invalid geometric input."""


class DegenerateOrientationError(GeometryError):
    """Tait-Bryan extraction too close to gimbal lock."""


class InsufficientDataError(GeometryError):
    pass


def _orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True)
class Pose:
    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("pose matrix has non-finite entries")
        m[3] = (0.0, 0.0, 0.0, 1.0)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, R, t, *, normalize: bool = True) -> "Pose":
        R = np.asarray(R, dtype=np.float64)
        if normalize and _orthonormality_error(R) > ORTHO_TOL:
            R = orthonormalize(R)
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = np.asarray(t, dtype=np.float64)
        return cls(m)

    @property
    def R(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = self.R.T
        m[:3, 3] = -self.R.T @ self.t
        return Pose(m)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        return _orthonormality_error(self.R) <= tol and np.linalg.det(self.R) > 0


@dataclass(frozen=True)
class MotionVector:
    phi: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64).reshape(3)
        trans = np.array(self.trans, dtype=np.float64).reshape(3)
        phi.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "trans", trans)

    @classmethod
    def zero(cls) -> "MotionVector":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, v) -> "MotionVector":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.phi, self.trans])


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]
    frame_period: float = 0.1

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise GeometryError("trajectory must contain at least one pose")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trajectory(self.poses[i], self.frame_period)
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @classmethod
    def from_matrices(cls, mats: Iterable, frame_period: float = 0.1) -> "Trajectory":
        return cls(tuple(Pose(m) for m in mats), frame_period)

    def matrices(self) -> np.ndarray:
        return np.stack([p.matrix for p in self.poses])

    def translations(self) -> np.ndarray:
        return np.stack([p.t for p in self.poses])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_yxz_to_matrix(phi) -> np.ndarray:
    """R = Ry(phi[0]) @ Rx(phi[1]) @ Rz(phi[2])."""
    return rot_y(phi[0]) @ rot_x(phi[1]) @ rot_z(phi[2])


def matrix_to_euler_yxz(R: np.ndarray) -> np.ndarray:
    # R[1,2] = -sin(phi_x); R[0,2]/R[2,2] and R[1,0]/R[1,1] carry the other two.
    sx = -R[1, 2]
    cx = np.hypot(R[1, 0], R[1, 1])
    if cx < GIMBAL_COS_TOL:
        raise DegenerateOrientationError(
            f"second Tait-Bryan angle (x') is at gimbal lock: sin={sx:.12f}"
        )
    ay = np.arctan2(R[0, 2], R[2, 2])
    ax = np.arctan2(sx, cx)
    az = np.arctan2(R[1, 0], R[1, 1])
    return _wrap(np.array([ay, ax, az]))


def _wrap(a: np.ndarray) -> np.ndarray:
    # map to (-pi, pi]
    out = np.mod(a + np.pi, 2 * np.pi) - np.pi
    out[out == -np.pi] = np.pi
    return out


def motion_to_pose(m: MotionVector) -> Pose:
    v = m.as_array()
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"motion vector has non-finite entries: {v}")
    return Pose.from_rt(euler_yxz_to_matrix(v[:3]), v[3:])


def pose_to_motion(p: Pose) -> MotionVector:
    return MotionVector(matrix_to_euler_yxz(p.R), p.t.copy())


def compose(prev: Pose, rel: Pose) -> Pose:
    m = prev.matrix @ rel.matrix
    R = m[:3, :3]
    if _orthonormality_error(R) > ORTHO_TOL:
        m[:3, :3] = orthonormalize(R)
    return Pose(m)


def relative(a: Pose, b: Pose) -> Pose:
    """Transform T with a @ T == b."""
    return compose(a.inverse(), b)


def rotation_angle(p: Pose | np.ndarray) -> float:
    """Angle of the rotation part, ``arccos((trace - 1) / 2)``.

    Evaluated as ``atan2(sin, cos)`` with the sine taken from the skew part,
    which keeps full precision near 0 and gives exactly 0 for a symmetric
    (numerically identity) matrix.
    """
    R = p.R if isinstance(p, Pose) else np.asarray(p)[:3, :3]
    c = (np.trace(R) - 1.0) / 2.0
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(np.linalg.norm(w) / 2.0, c))


def accumulate(initial: Pose, motions: Sequence[MotionVector], frame_period: float = 0.1) -> Trajectory:
    poses = [initial]
    for m in motions:
        poses.append(compose(poses[-1], motion_to_pose(m)))
    return Trajectory(tuple(poses), frame_period)


def relative_motions(traj: Trajectory) -> list[MotionVector]:
    """Per-step motions; inverse of :func:`accumulate`."""
    return [pose_to_motion(relative(a, b)) for a, b in zip(traj.poses[:-1], traj.poses[1:])]


def rigid_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation R and translation t with dst ~ R @ src + t (no scale).

    ``src`` and ``dst`` are (n, 3) point sets.
    """
    if np.array_equal(src, dst):
        return np.eye(3), np.zeros(3)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mu_d - R @ mu_s
    return R, t


def align_rigid(est: Trajectory, gt: Trajectory) -> Trajectory:
    if len(est) != len(gt):
        raise GeometryError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) < 3:
        raise InsufficientDataError(f"alignment needs at least 3 poses, got {len(est)}")
    R, t = rigid_alignment(est.translations(), gt.translations())
    G = Pose.from_rt(R, t)
    return Trajectory(tuple(compose(G, p) for p in est.poses), est.frame_period)
