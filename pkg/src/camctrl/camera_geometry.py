"""Camera trajectories, Plücker ray volumes, Euler pose targets and pose errors.

Extrinsics are stored world-to-camera, ``x_cam = R @ x_world + t``, with the
OpenCV axis convention (x right, y down, z forward). Intrinsics are normalized
by image width/height.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorio import TrajectoryFile

ORTHO_TOL = 1e-5
REPAIR_CEILING = 1e-3
GIMBAL_EPS = 1e-6


class GeometryError(ValueError):
    pass


class DegenerateDecompositionError(GeometryError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        _check_intrinsics(np.array([[self.fx, self.fy, self.cx, self.cy]]))


@dataclass(frozen=True)
class Extrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotations(R[None])
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


def _check_intrinsics(K: np.ndarray) -> None:
    fx, fy, cx, cy = K.T
    if not np.all(np.isfinite(K)):
        raise GeometryError("intrinsics must be finite")
    if np.any(fx <= 0) or np.any(fy <= 0):
        raise GeometryError("focal lengths must be positive")
    if np.any((cx <= 0) | (cx >= 1)) or np.any((cy <= 0) | (cy >= 1)):
        raise GeometryError("principal point must lie strictly inside (0, 1)")


def orthonormality_residual(R: np.ndarray) -> np.ndarray:
    """Max-abs entry of ``R^T R - I`` for each matrix in a stack."""
    R = np.asarray(R, dtype=np.float64)
    eye = np.eye(3)
    return np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(axis=(-1, -2))


def _check_rotations(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if not np.all(np.isfinite(R)):
        raise GeometryError("rotation must be finite")
    res = orthonormality_residual(R)
    if np.any(res > tol):
        raise GeometryError(f"rotation not orthonormal (residual {res.max():.3g})")
    det = np.linalg.det(R)
    if np.any(np.abs(det - 1.0) > tol):
        raise GeometryError(f"rotation determinant {det.min():.6g} is not +1")


@dataclass(frozen=True)
class CameraTrajectory:
    """F cameras as stacked arrays.

    Attributes:
        intrinsics: [F, 4] normalized (fx, fy, cx, cy)
        rotations: [F, 3, 3] world-to-camera rotations
        translations: [F, 3] world-to-camera translations
    """

    intrinsics: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        R = np.asarray(self.rotations, dtype=np.float64)
        t = np.asarray(self.translations, dtype=np.float64)
        if K.ndim == 1:
            K = np.broadcast_to(K, (R.shape[0], 4)).copy()
        if R.ndim != 3 or R.shape[1:] != (3, 3) or R.shape[0] < 1:
            raise GeometryError(f"rotations must be [F, 3, 3], got {R.shape}")
        F = R.shape[0]
        if K.shape != (F, 4) or t.shape != (F, 3):
            raise GeometryError("intrinsics/translations do not match frame count")
        _check_intrinsics(K)
        _check_rotations(R)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translations must be finite")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "translations", t)

    def __len__(self) -> int:
        return self.rotations.shape[0]

    def frame(self, i: int) -> tuple[Intrinsics, Extrinsics]:
        return Intrinsics(*self.intrinsics[i]), Extrinsics(self.rotations[i], self.translations[i])

    @classmethod
    def from_frames(cls, frames) -> "CameraTrajectory":
        frames = list(frames)
        K = np.array([[k.fx, k.fy, k.cx, k.cy] for k, _ in frames])
        R = np.stack([e.rotation for _, e in frames])
        t = np.stack([e.translation for _, e in frames])
        return cls(K, R, t)

    @classmethod
    def identity(cls, n_frames: int, intrinsics=(1.0, 1.0, 0.5, 0.5)) -> "CameraTrajectory":
        return cls(
            np.tile(np.asarray(intrinsics, dtype=np.float64), (n_frames, 1)),
            np.tile(np.eye(3), (n_frames, 1, 1)),
            np.zeros((n_frames, 3)),
        )

    @property
    def centers(self) -> np.ndarray:
        """Camera centers in world coordinates, ``-R^T t``."""
        return -np.einsum("fji,fj->fi", self.rotations, self.translations)

    def to_file(self, source_id: str = "camctrl", timestamps=None) -> TrajectoryFile:
        F = len(self)
        ts = np.arange(F, dtype=np.float64) if timestamps is None else np.asarray(timestamps, float)
        Rt = np.concatenate([self.rotations, self.translations[:, :, None]], axis=2)
        rec = np.concatenate(
            [ts[:, None], self.intrinsics, np.zeros((F, 2)), Rt.reshape(F, 12)], axis=1
        )
        return TrajectoryFile(source_id, rec)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Project (stacks of) 3x3 matrices onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    flip = np.linalg.det(R) < 0
    if np.any(flip):
        U = U.copy()
        U[flip, :, -1] *= -1
        R = U @ Vt
    return R


def build_trajectory(raw: TrajectoryFile) -> CameraTrajectory:
    """Validate raw records and repair small rotation drift."""
    K = raw.intrinsics.copy()
    _check_intrinsics(K)
    Rt = raw.extrinsics
    R = Rt[:, :, :3].copy()
    t = Rt[:, :, 3].copy()
    det = np.linalg.det(R)
    if np.any(det < 0):
        f = int(np.argmax(det < 0))
        raise GeometryError(f"frame {f}: rotation is a reflection (det={det[f]:.6g})")
    drift = orthonormality_residual(R)
    if np.any(drift > REPAIR_CEILING):
        f = int(np.argmax(drift))
        raise GeometryError(f"frame {f}: rotation drift {drift[f]:.3g} exceeds {REPAIR_CEILING}")
    R = nearest_rotation(R)
    return CameraTrajectory(K, R, t)


def normalize_to_first(traj: CameraTrajectory) -> CameraTrajectory:
    """Express every pose relative to frame 0 (``C_f @ C_0^-1``)."""
    R0 = traj.rotations[0]
    t0 = traj.translations[0]
    R_rel = traj.rotations @ R0.T
    t_rel = traj.translations - R_rel @ t0
    R_rel[0] = np.eye(3)
    t_rel[0] = 0.0
    return CameraTrajectory(traj.intrinsics.copy(), R_rel, t_rel)


def pixel_rays(intrinsics, H: int, W: int) -> np.ndarray:
    """Camera-frame ray directions (unnormalized, z=1) at pixel centers, [H, W, 3]."""
    fx, fy, cx, cy = intrinsics
    u = (np.arange(W) + 0.5) / W
    v = (np.arange(H) + 0.5) / H
    x = (u - cx) / fx
    y = (v - cy) / fy
    X, Y = np.meshgrid(x, y)
    return np.stack([X, Y, np.ones_like(X)], axis=-1)


def plucker_volume(traj: CameraTrajectory, H: int, W: int) -> np.ndarray:
    """Per-pixel Plücker coordinates ``(d, o x d)``, shape [F, H, W, 6]."""
    if H < 1 or W < 1:
        raise ValueError("H and W must be >= 1")
    F = len(traj)
    out = np.empty((F, H, W, 6), dtype=np.float64)
    origins = traj.centers
    for f in range(F):
        rays = pixel_rays(traj.intrinsics[f], H, W)
        d = rays @ traj.rotations[f]  # R^T applied to row vectors
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        out[f, ..., :3] = d
        out[f, ..., 3:] = np.cross(np.broadcast_to(origins[f], d.shape), d)
    return out


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_to_matrix(angles) -> np.ndarray:
    """``R_z(roll) @ R_y(yaw) @ R_x(pitch)`` for [..., 3] (pitch, yaw, roll)."""
    angles = np.asarray(angles, dtype=np.float64)
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cc * cb
    R[..., 0, 1] = cc * sb * sa - sc * ca
    R[..., 0, 2] = cc * sb * ca + sc * sa
    R[..., 1, 0] = sc * cb
    R[..., 1, 1] = sc * sb * sa + cc * ca
    R[..., 1, 2] = sc * sb * ca - cc * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def matrix_to_euler(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix`; angles wrapped to (-pi, pi]."""
    R = np.asarray(R, dtype=np.float64)
    cos_yaw = np.hypot(R[..., 0, 0], R[..., 1, 0])
    if np.any(cos_yaw < GIMBAL_EPS):
        raise DegenerateDecompositionError("yaw within gimbal lock (|cos(yaw)| < 1e-6)")
    pitch = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    yaw = np.arctan2(-R[..., 2, 0], cos_yaw)
    roll = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    ang = np.stack([pitch, yaw, roll], axis=-1)
    return np.where(ang <= -np.pi, ang + 2 * np.pi, ang)


def euler_targets(traj: CameraTrajectory) -> np.ndarray:
    """[F, 6] rows of (pitch, yaw, roll, tx, ty, tz) relative to frame 0."""
    rel = normalize_to_first(traj)
    out = np.concatenate([matrix_to_euler(rel.rotations), rel.translations], axis=1)
    out[0] = 0.0
    return out


def trajectory_from_euler(targets, intrinsics=(1.0, 1.0, 0.5, 0.5)) -> CameraTrajectory:
    """Recompose a trajectory from [F, 6] Euler targets."""
    targets = np.asarray(targets, dtype=np.float64)
    R = euler_to_matrix(targets[:, :3])
    K = np.broadcast_to(np.asarray(intrinsics, dtype=np.float64), (targets.shape[0], 4))
    return CameraTrajectory(K.copy(), R, targets[:, 3:].copy())


def _geodesic(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    # arccos((tr - 1) / 2) evaluated via atan2 for accuracy near 0 and pi
    M = Ra @ np.swapaxes(Rb, -1, -2)
    tr = np.trace(M, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    axis = np.stack(
        [M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]],
        axis=-1,
    )
    sin = np.clip(np.linalg.norm(axis, axis=-1) / 2.0, 0.0, 1.0)
    return np.arctan2(sin, cos)


def _check_pair(a: CameraTrajectory, b: CameraTrajectory) -> None:
    if len(a) != len(b):
        raise GeometryError(f"trajectory lengths differ: {len(a)} vs {len(b)}")


def rotation_error(a: CameraTrajectory, b: CameraTrajectory) -> float:
    """Mean per-frame geodesic angle between rotations, in radians."""
    _check_pair(a, b)
    return float(np.mean(_geodesic(a.rotations, b.rotations)))


def _max_norm_scaled(t: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(t, axis=1)
    peak = norms.max()
    if peak < 1e-8:
        return t
    return t / peak


def translation_error(a: CameraTrajectory, b: CameraTrajectory) -> float:
    """Mean per-frame distance between max-norm-normalized translations."""
    _check_pair(a, b)
    ta = _max_norm_scaled(a.translations)
    tb = _max_norm_scaled(b.translations)
    return float(np.mean(np.linalg.norm(ta - tb, axis=1)))
