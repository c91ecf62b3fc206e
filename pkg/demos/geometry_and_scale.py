"""Cameras from file to conditioning signal, and fixing their scale.

Run: python demos/geometry_and_scale.py
"""

import tempfile
from pathlib import Path

import numpy as np

from camctrl.camera_geometry import (
    CameraTrajectory,
    build_trajectory,
    euler_targets,
    normalize_to_first,
    plucker_volume,
    rot_y,
    rotation_error,
    translation_error,
)
from camctrl.metric_rescale import rescale_sequence, render_sparse_depth
from camctrl.tensorio import parse_trajectory, write_trajectory

F, H, W = 8, 24, 32
rng = np.random.default_rng(0)

# A camera walking right while turning slightly right, in metres.
# Extrinsics are world-to-camera, so a right turn shows up as negative yaw.
R = np.stack([rot_y(-0.02 * f) for f in range(F)])
centers = np.column_stack([0.15 * np.arange(F), np.zeros(F), np.zeros(F)])
t = -np.einsum("fij,fj->fi", R, centers)
metric = CameraTrajectory(np.tile([0.9, 1.2, 0.5, 0.5], (F, 1)), R, t)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "walk.txt"
    write_trajectory(metric.to_file("walk"), path)
    print(path.read_text().splitlines()[1][:70], "...")
    traj = build_trajectory(parse_trajectory(path))

vol = plucker_volume(normalize_to_first(traj), H, W)
d, m = vol[..., :3], vol[..., 3:]
print(f"Plucker volume {vol.shape}: |d| in [{np.linalg.norm(d, axis=-1).min():.6f}, "
      f"{np.linalg.norm(d, axis=-1).max():.6f}], max |m.d| = {np.abs((m * d).sum(-1)).max():.1e}")

targets = euler_targets(traj)
print("yaw per frame:", np.round(targets[:, 1], 3))
print("world-to-camera t_x per frame:", np.round(targets[:, 3], 3))

# An SfM reconstruction is only known up to scale. Shrink the world by 4
# and recover the factor from sparse points against metric depth maps.
pts = np.column_stack([rng.uniform(-3, 3, 500), rng.uniform(-2, 2, 500), rng.uniform(4, 12, 500)])
depth = np.stack([render_sparse_depth(pts, traj.intrinsics[f], R[f], t[f], H, W) for f in range(F)])
depth = np.where(depth > 0, depth, 8.0) * np.exp(rng.normal(0, 0.02, depth.shape))
recon = CameraTrajectory(traj.intrinsics, R, t / 4)
fixed, sol = rescale_sequence(recon, pts / 4, depth)
print(f"lambda = {sol.lambda_hat:.4f} from {sol.pair_count} pairs")
print(f"rotation error {rotation_error(fixed, metric):.2e}, "
      f"max translation gap {np.abs(fixed.translations - metric.translations).max():.3f} m, "
      f"scale-free translation error {translation_error(normalize_to_first(fixed), normalize_to_first(metric)):.2e}")
