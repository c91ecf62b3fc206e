"""Linear probes for camera pose on transformer activations.

For each (block, noise level) cell the pipeline is

    activations [D, T, H', W'] per video
      -> channel PCA fit on training videos (K components)
      -> central vector and spatial mean per latent frame, unrolled time-major
      -> column-standardized ridge regression onto flattened Euler targets
      -> predicted targets recomposed into trajectories and scored.
"""

from __future__ import annotations

import csv
import io
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .camera_geometry import rotation_error, trajectory_from_euler, translation_error
from .tensorio import read_tensor

NOISE_LEVELS = tuple(k / 8 for k in range(1, 9))
DEFAULT_ALPHA = 25_000.0
ACT_NAME = re.compile(r"^act_b(\d+)_s(\d+)_(.+)\.tnsr$")


class ProbeError(ValueError):
    pass


def level_index(noise_level: float) -> int:
    """Grid index k (1..8) of a noise level k/8."""
    k = int(round(noise_level * 8))
    if not (1 <= k <= 8 and math.isclose(noise_level, k / 8, abs_tol=1e-9)):
        raise ProbeError(f"noise level {noise_level} is not on the k/8 grid")
    return k


@dataclass(frozen=True)
class ActivationRecord:
    block_index: int
    noise_level: float
    features: np.ndarray  # [D, T, H', W']
    video_id: str

    def __post_init__(self):
        level_index(self.noise_level)
        if self.block_index < 1:
            raise ProbeError("block_index is 1-based")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 4:
            raise ProbeError(f"features must be [D, T, H', W'], got {feats.shape}")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class PCABasis:
    mean: np.ndarray  # [D]
    components: np.ndarray  # [K, D], orthonormal rows (zero rows when rank-deficient)
    variances: np.ndarray  # [K] eigenvalues captured

    def project(self, features: np.ndarray) -> np.ndarray:
        D = features.shape[0]
        flat = features.reshape(D, -1) - self.mean[:, None]
        return (self.components @ flat).reshape((-1,) + features.shape[1:])


def fit_pca(records, K: int) -> PCABasis:
    """Channel PCA over every (time, space) position of ``records``."""
    records = list(records)
    if not records:
        raise ProbeError("no records to fit PCA on")
    D = records[0].features.shape[0]
    if K > D:
        raise ProbeError(f"K={K} exceeds channel count D={D}")
    n, total, outer = 0, np.zeros(D), np.zeros((D, D))
    for r in records:
        X = r.features.reshape(D, -1)
        n += X.shape[1]
        total += X.sum(1)
        outer += X @ X.T
    mean = total / n
    cov = (outer - n * np.outer(mean, mean)) / max(n - 1, 1)
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(evals)[::-1][:K]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * D * np.finfo(np.float64).eps * 100
    rank = int(np.sum(evals > max(tol, 1e-300)))
    if rank < K:
        warnings.warn(f"activation covariance has rank {rank} < K={K}; padding with zero components")
    comps = np.zeros((K, D))
    for k in range(rank):
        v = evecs[:, k]
        comps[k] = -v if v[np.argmax(np.abs(v))] < 0 else v
    variances = np.where(np.arange(K) < rank, np.clip(evals, 0, None), 0.0)
    return PCABasis(mean, comps, variances)


def reduce_pca(records, K: int, train_ids=None):
    """Fit a K-component basis on the training videos and apply it to all records.

    Returns:
        (PCABasis, list of reduced ActivationRecord)
    """
    records = list(records)
    train = records if train_ids is None else [r for r in records if r.video_id in set(train_ids)]
    basis = fit_pca(train, K)
    reduced = [
        ActivationRecord(r.block_index, r.noise_level, basis.project(r.features), r.video_id) for r in records
    ]
    return basis, reduced


@dataclass(frozen=True)
class ProbeFeatures:
    matrix: np.ndarray  # [N, 2*K*T]
    video_ids: tuple


def feature_vector(features: np.ndarray) -> np.ndarray:
    """Central-then-pooled [K, T] blocks, each unrolled time-major (index t*K + k)."""
    K, T, H, W = features.shape
    central = features[:, :, H // 2, W // 2]
    pooled = features.mean(axis=(2, 3))
    return np.concatenate([central.T.ravel(), pooled.T.ravel()])


def build_features(records) -> ProbeFeatures:
    records = list(records)
    shapes = {r.features.shape for r in records}
    if len(shapes) != 1:
        raise ProbeError(f"inconsistent feature shapes: {sorted(shapes)}")
    return ProbeFeatures(
        np.stack([feature_vector(r.features) for r in records]), tuple(r.video_id for r in records)
    )


@dataclass(frozen=True)
class RidgeModel:
    x_mean: np.ndarray
    x_scale: np.ndarray  # 0 marks constant columns, which are dropped
    weights: np.ndarray  # [width, outputs]
    bias: np.ndarray  # [outputs]
    alpha: float
    train_ids: tuple = ()

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.x_scale > 0, self.x_scale, 1.0)
        return np.where(self.x_scale > 0, (X - self.x_mean) / safe, 0.0)

    def predict(self, X) -> np.ndarray:
        return self.standardize(X) @ self.weights + self.bias


def standardize_columns(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(mean)), scale, 0.0)
    return mean, scale


def fit_ridge(X, Y, alpha: float = DEFAULT_ALPHA, video_ids=()) -> RidgeModel:
    """Ridge regression on standardized columns with a centered target.

    Solves (Xs^T Xs + alpha I) W = Xs^T Yc by a symmetric positive-definite
    factorization. When there are fewer samples than columns the equivalent
    dual system (Xs Xs^T + alpha I) A = Yc, W = Xs^T A is solved instead.
    """
    X = np.asarray(X.matrix if isinstance(X, ProbeFeatures) else X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if not (alpha > 0):
        raise ProbeError("alpha must be positive")
    if X.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ProbeError(f"X {X.shape} and Y {Y.shape} disagree")
    if X.shape[0] < 2:
        raise ProbeError("need at least 2 samples")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ProbeError("non-finite entries in X or Y")
    mean, scale = standardize_columns(X)
    tmp = RidgeModel(mean, scale, np.zeros((X.shape[1], Y.shape[1])), np.zeros(Y.shape[1]), alpha)
    Xs = tmp.standardize(X)
    bias = Y.mean(axis=0)
    Yc = Y - bias
    N, width = Xs.shape
    if width <= N:
        A = Xs.T @ Xs
        A[np.diag_indices_from(A)] += alpha
        W = linalg.solve(A, Xs.T @ Yc, assume_a="pos")
    else:
        G = Xs @ Xs.T
        G[np.diag_indices_from(G)] += alpha
        W = Xs.T @ linalg.solve(G, Yc, assume_a="pos")
    return RidgeModel(mean, scale, W, bias, float(alpha), tuple(video_ids))


def ridge_objective(model: RidgeModel, X, Y) -> float:
    R = model.standardize(X) @ model.weights - (np.asarray(Y) - model.bias)
    return float(np.sum(R ** 2) + model.alpha * np.sum(model.weights ** 2))


def eval_probe(model: RidgeModel, X_test, Y_test, test_ids=None, intrinsics=(1.0, 1.0, 0.5, 0.5)):
    """Mean (rotation_error, translation_error) over test videos.

    Rows of ``Y_test`` are flattened [F, 6] Euler targets.
    """
    if isinstance(X_test, ProbeFeatures):
        test_ids = X_test.video_ids if test_ids is None else test_ids
        X_test = X_test.matrix
    if test_ids is not None:
        overlap = set(test_ids) & set(model.train_ids)
        if overlap:
            raise ProbeError(f"test videos overlap training split: {sorted(overlap)[:5]}")
    Y_test = np.asarray(Y_test, dtype=np.float64)
    pred = model.predict(X_test)
    rot, trans = [], []
    for p, y in zip(pred, Y_test):
        a = trajectory_from_euler(p.reshape(-1, 6), intrinsics)
        b = trajectory_from_euler(y.reshape(-1, 6), intrinsics)
        rot.append(rotation_error(a, b))
        trans.append(translation_error(a, b))
    return float(np.mean(rot)), float(np.mean(trans))


def default_split(video_ids, train_fraction: float = 0.9):
    """Sorted ids; the first ``train_fraction`` train, the rest test."""
    ids = sorted(set(video_ids))
    n_train = int(round(train_fraction * len(ids)))
    if n_train < 2 or n_train >= len(ids):
        raise ProbeError(f"cannot split {len(ids)} videos into train/test at {train_fraction}")
    return ids[:n_train], ids[n_train:]


@dataclass(frozen=True)
class SweepRow:
    block: int
    sigma: float
    rot_err: float
    trans_err: float


def probe_cell(records, targets: dict, K: int, alpha: float, train_ids, test_ids):
    train_ids, test_ids = set(train_ids), set(test_ids)
    by_id = {r.video_id: r for r in records}
    missing = (train_ids | test_ids) - by_id.keys()
    if missing:
        raise ProbeError(f"cell lacks videos {sorted(missing)[:5]}")
    _, reduced = reduce_pca([by_id[v] for v in sorted(train_ids | test_ids)], K, train_ids)
    tr = [r for r in reduced if r.video_id in train_ids]
    te = [r for r in reduced if r.video_id in test_ids]
    Xtr, Xte = build_features(tr), build_features(te)
    model = fit_ridge(Xtr, np.stack([targets[v] for v in Xtr.video_ids]), alpha, Xtr.video_ids)
    return eval_probe(model, Xte, np.stack([targets[v] for v in Xte.video_ids]))


def sweep(records, targets: dict, K: int = 16, alpha: float = DEFAULT_ALPHA, split=None) -> list[SweepRow]:
    """Independent probe per (block, noise level) cell.

    ``targets`` maps video id to flattened [F*6] Euler targets. Cells of the
    block x level grid with no records are reported with NaN errors.
    """
    cells: dict = {}
    for r in records:
        key = (r.block_index, level_index(r.noise_level))
        cell = cells.setdefault(key, {})
        if r.video_id in cell:
            raise ProbeError(f"duplicate record for block {key[0]}, sigma {key[1]}/8, video {r.video_id}")
        cell[r.video_id] = r
    if not cells:
        raise ProbeError("no activation records")
    if split is None:
        split = default_split(targets.keys())
    train_ids, test_ids = split
    blocks = sorted({b for b, _ in cells})
    levels = sorted({k for _, k in cells})
    rows, gaps = [], []
    for b in blocks:
        for k in levels:
            if (b, k) not in cells:
                gaps.append((b, k))
                rows.append(SweepRow(b, k / 8, math.nan, math.nan))
                continue
            rot, trans = probe_cell(list(cells[(b, k)].values()), targets, K, alpha, train_ids, test_ids)
            rows.append(SweepRow(b, k / 8, rot, trans))
    if gaps:
        warnings.warn(f"missing sweep cells (block, sigma*8): {gaps}")
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "sigma", "rot_err", "trans_err"])
    for r in rows:
        w.writerow([r.block, repr(r.sigma), repr(r.rot_err), repr(r.trans_err)])
    return buf.getvalue()


def load_activations(directory) -> list[ActivationRecord]:
    """Read ``act_b{block}_s{k}_{video_id}.tnsr`` files (noise level k/8)."""
    out = []
    for p in sorted(Path(directory).iterdir()):
        m = ACT_NAME.match(p.name)
        if m:
            out.append(ActivationRecord(int(m[1]), int(m[2]) / 8, read_tensor(p), m[3]))
    if not out:
        raise ProbeError(f"no activation files in {directory}")
    return out


def activation_filename(block: int, noise_level: float, video_id: str) -> str:
    return f"act_b{block}_s{level_index(noise_level)}_{video_id}.tnsr"
