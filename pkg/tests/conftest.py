import numpy as np
import pytest
from hypothesis import settings

from attnvo.geometry import MotionVector, Pose, Trajectory, accumulate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def rodrigues(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_pose(rng, scale=5.0):
    return Pose.from_rt(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_motion(rng, max_pitch=1.4):
    phi = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-max_pitch, max_pitch), rng.uniform(-np.pi, np.pi)])
    return MotionVector(phi, rng.uniform(-3, 3, 3))


def random_walk(rng, n, step=0.05):
    motions = [
        MotionVector(rng.normal(0, step, 3), rng.normal([0, 0, 1.0], 0.2))
        for _ in range(n - 1)
    ]
    return accumulate(Pose.identity(), motions)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
