import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from camctrl.camera_geometry import (
    CameraTrajectory,
    DegenerateDecompositionError,
    GeometryError,
    build_trajectory,
    euler_targets,
    euler_to_matrix,
    matrix_to_euler,
    normalize_to_first,
    orthonormality_residual,
    plucker_volume,
    rot_y,
    rotation_error,
    trajectory_from_euler,
    translation_error,
)
from camctrl.tensorio import TrajectoryFile

from .conftest import random_rotation, random_trajectory


def _raw(R, t=(0, 0, 0), K=(0.8, 0.9, 0.5, 0.5)):
    Rt = np.concatenate([np.asarray(R, float), np.asarray(t, float)[:, None]], axis=1)
    rec = np.concatenate([[0.0], K, [0.0, 0.0], Rt.ravel()])
    return TrajectoryFile("t", rec[None])


def test_build_identity():
    traj = build_trajectory(_raw(np.eye(3)))
    np.testing.assert_array_equal(traj.rotations[0], np.eye(3))
    np.testing.assert_array_equal(traj.translations[0], 0)


def test_build_repairs_small_drift(rng):
    R = random_rotation(rng)
    noisy = R + rng.normal(size=(3, 3)) * 3e-5
    assert 1e-5 < orthonormality_residual(noisy) <= 1e-3
    repaired = build_trajectory(_raw(noisy)).rotations[0]
    assert orthonormality_residual(repaired) < 1e-6
    # independent oracle: nearest orthonormal matrix via polar decomposition
    U, _, Vt = np.linalg.svd(noisy)
    np.testing.assert_allclose(repaired, U @ Vt, atol=1e-12)


@pytest.mark.parametrize(
    "R, match",
    [(-np.eye(3), "reflection"), (np.eye(3) * 1.01, "drift")],
)
def test_build_rejects(R, match):
    with pytest.raises(GeometryError, match=match):
        build_trajectory(_raw(R))


@pytest.mark.parametrize("K", [(0.0, 1, 0.5, 0.5), (1, 1, 1.0, 0.5), (1, 1, 0.5, -0.1)])
def test_build_rejects_intrinsics(K):
    with pytest.raises(GeometryError):
        build_trajectory(_raw(np.eye(3), K=K))


def test_normalize_fixed_point():
    traj = CameraTrajectory(
        [[1, 1, 0.5, 0.5]] * 2, np.stack([np.eye(3), rot_y(0.2)]), [[0, 0, 0], [1, 2, 3]]
    )
    out = normalize_to_first(traj)
    np.testing.assert_allclose(out.rotations, traj.rotations, atol=1e-15)
    np.testing.assert_allclose(out.translations, traj.translations, atol=1e-15)


def test_normalize_idempotent_and_rigid_invariant(rng):
    for _ in range(20):
        traj = random_trajectory(rng, 7)
        once = normalize_to_first(traj)
        twice = normalize_to_first(once)
        np.testing.assert_allclose(twice.rotations, once.rotations, atol=1e-12)
        np.testing.assert_allclose(twice.translations, once.translations, atol=1e-12)
        np.testing.assert_allclose(once.rotations[0], np.eye(3), atol=0)
        # world points x' = G x + g  =>  C'_f = C_f G^-1
        G = random_rotation(rng)
        g = rng.normal(size=3) * 5
        R2 = traj.rotations @ G.T
        t2 = traj.translations - R2 @ g
        moved = normalize_to_first(CameraTrajectory(traj.intrinsics, R2, t2))
        np.testing.assert_allclose(moved.rotations, once.rotations, atol=1e-5)
        np.testing.assert_allclose(moved.translations, once.translations, atol=1e-5)


def test_plucker_central_ray():
    traj = CameraTrajectory.identity(1, (1.0, 1.0, 0.5, 0.5))
    vol = plucker_volume(traj, 5, 5)
    np.testing.assert_allclose(vol[0, 2, 2], [0, 0, 1, 0, 0, 0], atol=1e-15)


def test_plucker_translated_camera():
    # camera center o = (1, 0, 0) => t = -R o
    traj = CameraTrajectory([1.0, 1.0, 0.5, 0.5], np.eye(3)[None], [[-1.0, 0, 0]])
    vol = plucker_volume(traj, 3, 3)
    np.testing.assert_allclose(vol[0, 1, 1], [0, 0, 1, 0, -1, 0], atol=1e-15)


def test_plucker_invariants_and_reconstruction(rng):
    for _ in range(20):
        traj = random_trajectory(rng, 2)
        vol = plucker_volume(traj, 16, 16)
        d, m = vol[..., :3], vol[..., 3:]
        np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-5)
        assert np.abs(np.sum(m * d, axis=-1)).max() < 1e-5
        # line-from-Plücker oracle: d x m is the point of the line closest to the origin
        for f in range(2):
            v, u = rng.integers(0, 16, size=2)
            o_rec = np.cross(d[f, v, u], m[f, v, u])
            o_true = traj.centers[f]
            diff = o_rec - o_true
            dist = np.linalg.norm(diff - np.dot(diff, d[f, v, u]) * d[f, v, u])
            assert dist < 1e-5


def test_euler_identity():
    np.testing.assert_array_equal(euler_targets(CameraTrajectory.identity(4)), 0.0)


def test_euler_single_axis_yaw():
    traj = CameraTrajectory.identity(2)
    traj = CameraTrajectory(traj.intrinsics, np.stack([np.eye(3), rot_y(0.3)]), traj.translations)
    targets = euler_targets(traj)
    np.testing.assert_allclose(targets[1, :3], [0.0, 0.3, 0.0], atol=1e-6)


def test_euler_recomposition(rng):
    for _ in range(100):
        angles = rng.uniform(-0.5, 0.5, size=3)
        R = euler_to_matrix(angles)
        back = euler_to_matrix(matrix_to_euler(R))
        assert np.abs(back - R).max() < 1e-6


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-3.1, 3.1),
    st.floats(-1.5, 1.5),
    st.floats(-3.1, 3.1),
)
def test_euler_angles_round_trip(pitch, yaw, roll):
    angles = np.array([pitch, yaw, roll])
    np.testing.assert_allclose(matrix_to_euler(euler_to_matrix(angles)), angles, atol=1e-6)


def test_euler_order_matches_scipy():
    angles = np.array([0.2, -0.4, 0.7])
    ref = Rotation.from_euler("ZYX", angles[::-1]).as_matrix()
    np.testing.assert_allclose(euler_to_matrix(angles), ref, atol=1e-12)


def test_euler_gimbal_lock():
    R = euler_to_matrix([0.1, np.pi / 2, 0.2])
    with pytest.raises(DegenerateDecompositionError):
        matrix_to_euler(R)


def test_euler_targets_rows():
    traj = trajectory_from_euler([[0, 0, 0, 0, 0, 0], [0.1, 0.2, 0.3, 1, 2, 3]])
    t = euler_targets(traj)
    np.testing.assert_allclose(t[1], [0.1, 0.2, 0.3, 1, 2, 3], atol=1e-12)
    assert np.all(t[:, :3] > -np.pi) and np.all(t[:, :3] <= np.pi)


def test_rotation_error_basic(rng):
    a = random_trajectory(rng, 5)
    assert rotation_error(a, a) == 0.0
    b = CameraTrajectory(a.intrinsics, rot_y(0.1) @ a.rotations, a.translations)
    assert rotation_error(a, b) == pytest.approx(0.1, abs=1e-6)


def test_rotation_error_quaternion_oracle(rng):
    for _ in range(30):
        a = random_trajectory(rng, 4)
        b = random_trajectory(rng, 4)
        qa = Rotation.from_matrix(a.rotations).as_quat()
        qb = Rotation.from_matrix(b.rotations).as_quat()
        dots = np.clip(np.abs(np.sum(qa * qb, axis=1)), 0, 1)
        oracle = np.mean(2 * np.arccos(dots))
        err = rotation_error(a, b)
        assert err == pytest.approx(oracle, abs=1e-6)
        assert rotation_error(b, a) == pytest.approx(err, abs=1e-12)
        assert 0 <= err <= np.pi


def test_rotation_error_length_mismatch(rng):
    with pytest.raises(GeometryError):
        rotation_error(random_trajectory(rng, 3), random_trajectory(rng, 4))


def test_translation_error_scale_invariant(rng):
    a = random_trajectory(rng, 6)
    assert translation_error(a, a) == 0.0
    for lam in (2.0, 0.01, 37.5):
        b = CameraTrajectory(a.intrinsics, a.rotations, lam * a.translations)
        assert translation_error(a, b) == pytest.approx(0.0, abs=1e-12)


def test_translation_error_reversed_line():
    F = 5
    line = np.zeros((F, 3))
    line[:, 0] = np.arange(F)
    a = CameraTrajectory.identity(F)
    a = CameraTrajectory(a.intrinsics, a.rotations, line)
    b = CameraTrajectory(a.intrinsics, a.rotations, line[::-1].copy())
    # brute-force evaluation of the formula
    ta = line / 4.0
    tb = line[::-1] / 4.0
    expected = sum(np.sqrt(sum((ta[i, k] - tb[i, k]) ** 2 for k in range(3))) for i in range(F)) / F
    assert translation_error(a, b) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx((1 + 0.5 + 0 + 0.5 + 1) / 5)


def test_translation_error_all_zero_skips_scaling():
    a = CameraTrajectory.identity(3)
    b = CameraTrajectory(a.intrinsics, a.rotations, np.full((3, 3), 1e-9))
    assert translation_error(a, b) == pytest.approx(np.sqrt(3) * 1e-9)
