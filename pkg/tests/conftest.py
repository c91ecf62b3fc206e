import numpy as np
import pytest

from camctrl.camera_geometry import CameraTrajectory


def random_rotation(rng, scale=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-scale, scale)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def random_trajectory(rng, n_frames=6, angle_scale=np.pi, trans_scale=2.0):
    K = np.column_stack(
        [
            rng.uniform(0.5, 1.5, n_frames),
            rng.uniform(0.5, 1.5, n_frames),
            rng.uniform(0.3, 0.7, n_frames),
            rng.uniform(0.3, 0.7, n_frames),
        ]
    )
    R = np.stack([random_rotation(rng, angle_scale) for _ in range(n_frames)])
    t = rng.normal(scale=trans_scale, size=(n_frames, 3))
    return CameraTrajectory(K, R, t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
