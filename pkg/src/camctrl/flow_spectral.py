"""Optical flow, latent PCA projection and motion spectral volumes.

Flow is a coarse-to-fine Horn-Schunck scheme with image warping: at every
pyramid level the target image is warped by the current flow, the brightness
constancy term is linearized around it, and Jacobi sweeps solve the coupled
data + quadratic smoothness system for the updated flow.

A flow field ``w`` maps the source to the target: ``dst(x + w(x)) ~ src(x)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_HS_KERNEL = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0


@dataclass(frozen=True)
class FlowConfig:
    levels: int = 4
    smoothness: float = 15.0  # on images rescaled to [0, 255]
    iterations: int = 30
    warps: int = 3
    scale: float = 0.5
    min_side: int = 16
    presmooth: float = 0.5
    n_bins: int = 32
    anchor_stride: int = 6
    horizon: int = 24


@dataclass
class SpectralVolume:
    """Radially binned amplitude spectrum of flow fields.

    ``amplitude`` is the per-bin mean of |FFT|/(H*W) averaged over the dx/dy
    components and all fields; ``power`` is the per-bin sum of |FFT|^2/(H*W)
    over both components averaged over fields, so ``power.sum()`` equals the
    mean spatial energy sum(dx^2 + dy^2) (Parseval).
    """

    nu: np.ndarray
    amplitude: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    pair_count: int


@dataclass
class TimestepSpectra:
    volumes: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def rows(self):
        for t in sorted(self.volumes):
            vol = self.volumes[t]
            for j in range(vol.nu.size):
                yield t, float(vol.nu[j]), float(vol.amplitude[j]), float(self.ratios[t][j])


# ---------------------------------------------------------------------------
# PCA to three channels


def pca_to_rgb(latents) -> np.ndarray:
    """Project [F, C, H, W] latents to [F, 3, H, W] via per-frame PCA.

    Output channels are the top-3 principal component scores, each min-max
    rescaled to [0, 1]. Component signs make the largest-magnitude loading
    positive.
    """
    lat = np.asarray(latents, dtype=np.float64)
    if lat.ndim != 4:
        raise ValueError(f"latents must be [F, C, H, W], got {lat.shape}")
    F, C, H, W = lat.shape
    if C < 3:
        raise ValueError(f"need at least 3 channels, got {C}")
    out = np.zeros((F, 3, H, W))
    for f in range(F):
        X = lat[f].reshape(C, -1).T
        X = X - X.mean(axis=0)
        cov = X.T @ X / max(X.shape[0] - 1, 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:3]
        evals, evecs = evals[order], evecs[:, order]
        tol = max(evals[0], 0.0) * C * np.finfo(np.float64).eps * 10
        rank = int(np.sum(evals > max(tol, 1e-300)))
        if rank < 3:
            warnings.warn(f"frame {f}: latent covariance has rank {rank} < 3; padding with zeros")
        for k in range(rank):
            v = evecs[:, k]
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
            score = X @ v
            span = score.max() - score.min()
            out[f, k] = ((score - score.min()) / span if span > 0 else 0.0).reshape(H, W)
    return out


# ---------------------------------------------------------------------------
# Optical flow


def _as_channels(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3:
        return a
    raise ValueError(f"image must be [H, W] or [C, H, W], got {a.shape}")


def _pyramid_shapes(H: int, W: int, cfg: FlowConfig) -> list[tuple[int, int]]:
    shapes = [(H, W)]
    while len(shapes) < cfg.levels:
        h, w = shapes[-1]
        nh, nw = int(round(h * cfg.scale)), int(round(w * cfg.scale))
        if min(nh, nw) < cfg.min_side:
            break
        shapes.append((nh, nw))
    return shapes


def _resize(img: np.ndarray, shape) -> np.ndarray:
    C, h, w = img.shape
    H, W = shape
    if (h, w) == (H, W):
        return img
    sigma = 0.5 * max(h / H, w / W) if H < h else 0.0
    out = np.empty((C, H, W))
    ys = (np.arange(H) + 0.5) * h / H - 0.5
    xs = (np.arange(W) + 0.5) * w / W - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    for c in range(C):
        src = ndimage.gaussian_filter(img[c], sigma, mode="nearest") if sigma > 0 else img[c]
        out[c] = ndimage.map_coordinates(src, grid, order=1, mode="nearest")
    return out


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    C, H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    coords = [yy + v, xx + u]
    return np.stack([ndimage.map_coordinates(img[c], coords, order=1, mode="nearest") for c in range(C)])


def _gradients(img: np.ndarray):
    gy = np.stack([np.gradient(ch, axis=0) for ch in img])
    gx = np.stack([np.gradient(ch, axis=1) for ch in img])
    return gx, gy


def _refine(I1, I2, u, v, cfg: FlowConfig):
    a2 = cfg.smoothness ** 2
    g1x, g1y = _gradients(I1)
    for _ in range(cfg.warps):
        I2w = _warp(I2, u, v)
        g2x, g2y = _gradients(I2w)
        Ix = 0.5 * (g1x + g2x)
        Iy = 0.5 * (g1y + g2y)
        It = I2w - I1
        # no data term where the warp samples outside the target image
        H, W = u.shape
        yy, xx = np.mgrid[0:H, 0:W]
        inside = (xx + u >= 0) & (xx + u <= W - 1) & (yy + v >= 0) & (yy + v <= H - 1)
        Ix, Iy, It = Ix * inside, Iy * inside, It * inside
        u0, v0 = u.copy(), v.copy()
        Jxx = (Ix * Ix).sum(0)
        Jxy = (Ix * Iy).sum(0)
        Jyy = (Iy * Iy).sum(0)
        # residual linearized at (u0, v0): Ix (u - u0) + Iy (v - v0) + It
        bx = (Ix * (Ix * u0[None] + Iy * v0[None] - It)).sum(0)
        by = (Iy * (Ix * u0[None] + Iy * v0[None] - It)).sum(0)
        A = a2 + Jxx
        B = Jxy
        D = a2 + Jyy
        det = A * D - B * B
        for _ in range(cfg.iterations):
            ub = ndimage.convolve(u, _HS_KERNEL, mode="nearest")
            vb = ndimage.convolve(v, _HS_KERNEL, mode="nearest")
            rx = a2 * ub + bx
            ry = a2 * vb + by
            u = (D * rx - B * ry) / det
            v = (A * ry - B * rx) / det
    return u, v


def estimate_flow(src, dst, cfg: FlowConfig | None = None) -> np.ndarray:
    """Dense flow from ``src`` to ``dst`` as an [H, W, 2] array of (dx, dy) pixels."""
    cfg = cfg or FlowConfig()
    I1 = _as_channels(src)
    I2 = _as_channels(dst)
    if I1.shape != I2.shape:
        raise ValueError(f"image shapes differ: {I1.shape} vs {I2.shape}")
    _, H, W = I1.shape
    if min(H, W) < cfg.min_side:
        raise ValueError(f"image {H}x{W} smaller than minimum side {cfg.min_side}")
    lo = min(I1.min(), I2.min())
    hi = max(I1.max(), I2.max())
    if not hi > lo:
        return np.zeros((H, W, 2))
    I1 = (I1 - lo) * (255.0 / (hi - lo))
    I2 = (I2 - lo) * (255.0 / (hi - lo))
    if cfg.presmooth > 0:
        I1 = np.stack([ndimage.gaussian_filter(c, cfg.presmooth, mode="nearest") for c in I1])
        I2 = np.stack([ndimage.gaussian_filter(c, cfg.presmooth, mode="nearest") for c in I2])

    shapes = _pyramid_shapes(H, W, cfg)
    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    for level in range(len(shapes) - 1, -1, -1):
        shape = shapes[level]
        if u.shape != shape:
            sy, sx = shape[0] / u.shape[0], shape[1] / u.shape[1]
            u = _resize(u[None], shape)[0] * sx
            v = _resize(v[None], shape)[0] * sy
        u, v = _refine(_resize(I1, shape), _resize(I2, shape), u, v, cfg)
    return np.stack([u, v], axis=-1)


# ---------------------------------------------------------------------------
# Spectra


def radial_bins(H: int, W: int, n_bins: int):
    """Bin index per FFT coefficient and bin centers from DC (0) to Nyquist (0.5)."""
    ky = np.fft.fftfreq(H)[:, None]
    kx = np.fft.fftfreq(W)[None, :]
    nu = np.sqrt(ky ** 2 + kx ** 2)
    step = 0.5 / (n_bins - 1)
    idx = np.minimum(np.rint(nu / step).astype(np.int64), n_bins - 1)
    centers = np.arange(n_bins) * step
    return idx, centers


def spectral_volume(flows, n_bins: int = 32) -> SpectralVolume:
    flows = [np.asarray(f, dtype=np.float64) for f in flows]
    if not flows:
        raise ValueError("need at least one flow field")
    shape = flows[0].shape
    if len(shape) != 3 or shape[2] != 2:
        raise ValueError(f"flow must be [H, W, 2], got {shape}")
    for f in flows:
        if f.shape != shape:
            raise ValueError(f"flow dims differ: {f.shape} vs {shape}")
    H, W, _ = shape
    N = H * W
    idx, centers = radial_bins(H, W, n_bins)
    counts = np.bincount(idx.ravel(), minlength=n_bins)
    amp_sum = np.zeros(n_bins)
    pow_sum = np.zeros(n_bins)
    for f in flows:
        spec = np.fft.fft2(np.moveaxis(f, -1, 0), axes=(-2, -1))
        amp = np.abs(spec) / N
        pw = np.abs(spec) ** 2 / N
        for c in range(2):
            amp_sum += np.bincount(idx.ravel(), weights=amp[c].ravel(), minlength=n_bins)
            pow_sum += np.bincount(idx.ravel(), weights=pw[c].ravel(), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        amplitude = np.where(counts > 0, amp_sum / np.maximum(counts, 1) / (2 * len(flows)), 0.0)
    return SpectralVolume(centers, amplitude, pow_sum / len(flows), counts, len(flows))


def anchor_pairs(n_frames: int, stride: int = 6, horizon: int = 24) -> list[tuple[int, int]]:
    """(anchor, target) index pairs: every ``stride``-th frame to each of the next ``horizon``."""
    pairs = []
    for a in range(0, n_frames, stride):
        for b in range(a + 1, min(a + horizon, n_frames - 1) + 1):
            pairs.append((a, b))
    return pairs


def video_flows(video, cfg: FlowConfig | None = None, pairs=None) -> list[np.ndarray]:
    """Flows over anchor pairs of a [F, C, H, W] video; C > 3 is PCA-projected first."""
    cfg = cfg or FlowConfig()
    vid = np.asarray(video, dtype=np.float64)
    if vid.ndim != 4:
        raise ValueError(f"video must be [F, C, H, W], got {vid.shape}")
    if vid.shape[0] < 2:
        raise ValueError("video needs at least 2 frames")
    if vid.shape[1] > 3:
        vid = pca_to_rgb(vid)
    if pairs is None:
        pairs = anchor_pairs(vid.shape[0], cfg.anchor_stride, cfg.horizon)
    return [estimate_flow(vid[a], vid[b], cfg) for a, b in pairs]


def ratio(amplitude: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-bin amplitude ratio; 0/0 bins read as 1."""
    with np.errstate(invalid="ignore", divide="ignore"):
        r = amplitude / reference
    both_zero = (amplitude == 0) & (reference == 0)
    return np.where(both_zero, 1.0, r)


def per_timestep_spectra(denoised: dict, cfg: FlowConfig | None = None) -> TimestepSpectra:
    """Spectral volumes of denoised predictions per timestep and their ratio to t=0.

    ``denoised`` maps a noise level t to a list of [F, C, H, W] videos.
    """
    cfg = cfg or FlowConfig()
    keys = sorted(denoised)
    zero = [t for t in keys if math.isclose(t, 0.0, abs_tol=1e-12)]
    if not zero:
        raise ValueError("denoised predictions must include t = 0")
    out = TimestepSpectra()
    for t in keys:
        flows = []
        for vid in denoised[t]:
            flows.extend(video_flows(vid, cfg))
        out.volumes[t] = spectral_volume(flows, cfg.n_bins)
    ref = out.volumes[zero[0]].amplitude
    for t in keys:
        out.ratios[t] = ratio(out.volumes[t].amplitude, ref)
    return out
