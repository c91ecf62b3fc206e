"""Where does a network store camera pose? A linear probe sweep.

Builds activations for 4 blocks x 2 noise levels. Only block 2 at
sigma = 0.75 linearly encodes the pose. Then fits one ridge probe per cell
and prints the error table as CSV. The planted cell should stand out.

Run: python demos/probing_sweep.py
"""

import numpy as np

from camctrl.probing import ActivationRecord, sweep, sweep_csv

rng = np.random.default_rng(0)
n_videos, F, D, T = 60, 8, 24, 2
Z = rng.normal(0, 0.04, size=(n_videos, 2))  # yaw rate, forward speed
targets = {}
for i in range(n_videos):
    pose = np.zeros((F, 6))
    pose[:, 1] = Z[i, 0] * np.arange(F)
    pose[:, 5] = Z[i, 1] * np.arange(F)
    targets[f"v{i:03d}"] = pose.ravel()

mix = rng.normal(size=(T, D, 2)) * 20
records = []
for block in range(1, 5):
    for sigma in (0.25, 0.75):
        for i in range(n_videos):
            feats = rng.normal(size=(D, T, 3, 3))
            if (block, sigma) == (2, 0.75):
                feats += np.einsum("tdk,k->dt", mix, Z[i])[:, :, None, None]
            records.append(ActivationRecord(block, sigma, feats, f"v{i:03d}"))

rows = sweep(records, targets, K=8, alpha=10.0)
print(sweep_csv(rows), end="")
best = min(rows, key=lambda r: r.rot_err)
print(f"\nlowest rotation error at block {best.block}, sigma {best.sigma}: {best.rot_err:.4f} rad")
