"""Small on-disk inputs for exercising every subcommand."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from camctrl.camera_geometry import CameraTrajectory, euler_targets, rot_y
from camctrl.metric_rescale import render_sparse_depth
from camctrl.probing import activation_filename
from camctrl.tensorio import write_tensor, write_trajectory

TINY_MODEL = [
    "model.n_blocks=1",
    "model.d_main=32",
    "model.n_heads=2",
    "model.patch=4",
    "model.d_cam=16",
    "model.cam_heads=2",
    "train.steps=2",
    "train.batch_size=2",
]


def yaw_file(path, n_frames=5, rate=0.03, scale=1.0) -> Path:
    R = np.stack([rot_y(rate * f) for f in range(n_frames)])
    t = np.column_stack([scale * 0.1 * np.arange(n_frames), np.zeros(n_frames), np.zeros(n_frames)])
    traj = CameraTrajectory(np.tile([1.0, 1.0, 0.5, 0.5], (n_frames, 1)), R, t)
    write_trajectory(traj.to_file("fixture"), path)
    return Path(path)


def rescale_fixture(root) -> dict:
    """Reconstruction at half the metric scale, so the fitted lambda is exactly 2."""
    root = Path(root)
    rng = np.random.default_rng(3)
    F, H, W = 3, 16, 16
    pts = np.column_stack([rng.uniform(-2, 2, 200), rng.uniform(-2, 2, 200), rng.uniform(4, 8, 200)])
    R = np.tile(np.eye(3), (F, 1, 1))
    t = np.zeros((F, 3))
    K = np.tile([1.0, 1.0, 0.5, 0.5], (F, 1))
    metric = np.stack([render_sparse_depth(pts, K[f], R[f], t[f], H, W) for f in range(F)])
    metric[metric == 0] = 6.0
    write_trajectory(CameraTrajectory(K, R, t).to_file("recon"), root / "recon.txt")
    write_tensor(pts / 2, root / "points.tnsr")
    write_tensor(metric, root / "depths.tnsr")
    return {"trajectory": root / "recon.txt", "points": root / "points.tnsr", "depths": root / "depths.tnsr"}


def activation_fixture(root, n_videos=10, n_frames=3) -> tuple[Path, Path]:
    """Activation directory for 2 blocks x 2 noise levels plus matching targets."""
    root = Path(root)
    acts = root / "acts"
    acts.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(11)
    ids = [f"v{i:02d}" for i in range(n_videos)]
    targets = []
    for vid in ids:
        rates = rng.uniform(-0.05, 0.05)
        R = np.stack([rot_y(rates * f) for f in range(n_frames)])
        traj = CameraTrajectory(np.tile([1.0, 1.0, 0.5, 0.5], (n_frames, 1)), R, np.zeros((n_frames, 3)))
        targets.append(euler_targets(traj).reshape(-1))
        for block in (1, 2):
            for level in (0.25, 0.5):
                feats = rng.normal(size=(6, 1, 2, 2))
                feats[0] += 20 * rates * block
                write_tensor(feats, acts / activation_filename(block, level, vid))
    write_tensor(np.stack(targets), root / "targets.tnsr")
    return acts, root / "targets.tnsr"
