"""Metric rescaling of reconstructed camera trajectories.

Sparse reconstruction points are splatted into per-frame depth maps, paired
with metric depth estimates, and a single global scale is fit by minimizing
the mean absolute depth residual. The L1 problem

    min_lambda  sum_i w_i |lambda * d_c[i] - d_m[i]|

equals ``sum_i w_i d_c[i] |lambda - r_i|`` with ``r_i = d_m[i] / d_c[i]``, so
its minimizer is the weighted median of the ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera_geometry import CameraTrajectory


class RescaleError(ValueError):
    pass


@dataclass(frozen=True)
class DepthPairSet:
    """Pooled (reconstruction depth, metric depth) pairs with their frame index."""

    d_c: np.ndarray
    d_m: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        d_c = np.asarray(self.d_c, dtype=np.float64).ravel()
        d_m = np.asarray(self.d_m, dtype=np.float64).ravel()
        frame = np.zeros(d_c.shape, np.int64) if self.frame is None else np.asarray(self.frame)
        frame = frame.astype(np.int64).ravel()
        if not (d_c.shape == d_m.shape == frame.shape):
            raise RescaleError("d_c, d_m and frame must have equal length")
        object.__setattr__(self, "d_c", d_c)
        object.__setattr__(self, "d_m", d_m)
        object.__setattr__(self, "frame", frame)

    def __len__(self) -> int:
        return self.d_c.size

    def valid(self) -> "DepthPairSet":
        ok = np.isfinite(self.d_c) & np.isfinite(self.d_m) & (self.d_c > 0) & (self.d_m > 0)
        return DepthPairSet(self.d_c[ok], self.d_m[ok], self.frame[ok])


@dataclass(frozen=True)
class ScaleSolution:
    lambda_hat: float
    objective_value: float
    pair_count: int


def weighted_median(values, weights) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    k = int(np.searchsorted(cw, 0.5 * cw[-1], side="left"))
    return float(v[min(k, v.size - 1)])


def l1_objective(lam: float, pairs: DepthPairSet, per_frame: bool = False) -> float:
    res = np.abs(lam * pairs.d_c - pairs.d_m)
    if not per_frame:
        return float(res.mean())
    frames, inv = np.unique(pairs.frame, return_inverse=True)
    per = np.bincount(inv, weights=res) / np.bincount(inv)
    return float(per.mean())


def solve_scale(pairs: DepthPairSet, per_frame: bool = False) -> ScaleSolution:
    """Global scale minimizing the mean absolute depth residual.

    With ``per_frame=True`` residuals are averaged within each frame first,
    then across frames.
    """
    pairs = pairs.valid()
    if len(pairs) == 0:
        raise RescaleError("no valid depth pairs after filtering")
    weights = pairs.d_c.copy()
    if per_frame:
        _, inv, counts = np.unique(pairs.frame, return_inverse=True, return_counts=True)
        weights = weights / counts[inv]
    if not np.sum(weights) > 0:
        raise RescaleError("depth pairs carry zero total weight")
    lam = weighted_median(pairs.d_m / pairs.d_c, weights)
    return ScaleSolution(lam, l1_objective(lam, pairs, per_frame), len(pairs))


def rescale_trajectory(traj: CameraTrajectory, sol: ScaleSolution) -> CameraTrajectory:
    return CameraTrajectory(traj.intrinsics, traj.rotations, traj.translations * sol.lambda_hat)


def render_sparse_depth(points, intrinsics, rotation, translation, H: int, W: int) -> np.ndarray:
    """Splat 3D world points into an [H, W] depth map; 0 marks empty pixels."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise RescaleError("point list is empty")
    fx, fy, cx, cy = intrinsics
    cam = pts @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation, dtype=np.float64)
    z = cam[:, 2]
    front = np.isfinite(z) & (z > 0)
    cam, z = cam[front], z[front]
    col = np.floor((fx * cam[:, 0] / z + cx) * W).astype(np.int64)
    row = np.floor((fy * cam[:, 1] / z + cy) * H).astype(np.int64)
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    col, row, z = col[inside], row[inside], z[inside]
    depth = np.full(H * W, np.inf)
    np.minimum.at(depth, row * W + col, z)
    depth[np.isinf(depth)] = 0.0
    return depth.reshape(H, W)


def collect_pairs(sparse_depths, metric_depths) -> DepthPairSet:
    """Pair rendered [F, H, W] depths with metric depths at nonzero pixels."""
    sparse = np.asarray(sparse_depths, dtype=np.float64)
    metric = np.asarray(metric_depths, dtype=np.float64)
    if sparse.shape != metric.shape:
        raise RescaleError(f"depth shapes differ: {sparse.shape} vs {metric.shape}")
    hit = sparse > 0
    frame = np.broadcast_to(np.arange(sparse.shape[0])[:, None, None], sparse.shape)
    return DepthPairSet(sparse[hit], metric[hit], frame[hit]).valid()


def rescale_sequence(traj: CameraTrajectory, points, metric_depths, per_frame: bool = False):
    """Render, pair, solve and rescale in one go.

    Returns:
        (rescaled trajectory, ScaleSolution)
    """
    metric = np.asarray(metric_depths, dtype=np.float64)
    if metric.ndim != 3 or metric.shape[0] != len(traj):
        raise RescaleError(f"metric depths must be [F={len(traj)}, H, W], got {metric.shape}")
    _, H, W = metric.shape
    sparse = np.stack(
        [
            render_sparse_depth(points, traj.intrinsics[f], traj.rotations[f], traj.translations[f], H, W)
            for f in range(len(traj))
        ]
    )
    sol = solve_scale(collect_pairs(sparse, metric), per_frame=per_frame)
    return rescale_trajectory(traj, sol), sol
