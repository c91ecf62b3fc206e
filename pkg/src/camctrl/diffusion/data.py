"""Turning synthetic clips or dataset directories into training tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..camera_geometry import CameraTrajectory, build_trajectory, normalize_to_first, plucker_volume
from ..synth import read_manifest, tokenize
from ..tensorio import parse_trajectory, read_tensor
from .training import TrainData


def plucker_tensor(traj: CameraTrajectory, H: int, W: int) -> torch.Tensor:
    """[F, H, W, 6] float32 Plucker volume of the trajectory relative to its first frame."""
    return torch.from_numpy(plucker_volume(normalize_to_first(traj), H, W).astype(np.float32))


def from_clips(clips) -> TrainData:
    videos = torch.from_numpy(np.stack([c.video for c in clips]).astype(np.float32))
    tokens = torch.from_numpy(np.stack([c.tokens for c in clips]))
    _, _, _, H, W = videos.shape
    pl = torch.stack([plucker_tensor(c.trajectory, H, W) for c in clips])
    return TrainData(videos, tokens, pl)


def from_directory(directory) -> TrainData:
    """Load a dataset written by ``synth.make_dataset``."""
    root = Path(directory)
    rows = read_manifest(root / "manifest.csv")
    videos, tokens, pl = [], [], []
    for row in rows:
        cid = row["clip_id"]
        v = read_tensor(root / f"{cid}.video.tnsr")
        traj = build_trajectory(parse_trajectory(root / f"{cid}.traj.txt"))
        videos.append(v)
        tokens.append(tokenize(row["caption"]))
        pl.append(plucker_tensor(traj, v.shape[2], v.shape[3]))
    return TrainData(
        torch.from_numpy(np.stack(videos)), torch.from_numpy(np.stack(tokens)), torch.stack(pl)
    )


def yaw_trajectory(yaw_rate: float, n_frames: int, intrinsics=(1.0, 1.0, 0.5, 0.5)) -> CameraTrajectory:
    """Pure yaw at ``yaw_rate`` rad/frame; positive turns the camera to the right."""
    from ..camera_geometry import rot_y

    R = np.stack([rot_y(yaw_rate * f).T for f in range(n_frames)])
    return CameraTrajectory(np.tile(intrinsics, (n_frames, 1)), R, np.zeros((n_frames, 3)))
