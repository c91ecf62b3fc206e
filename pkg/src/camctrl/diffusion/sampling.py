"""Separate text/camera guidance and the deterministic Euler sampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import ConfigError, GuidanceWeights
from .model import VDiT


def combine_guidance(full, cam_only, text_only, g: GuidanceWeights):
    """(1 + w_y + w_c) * s(x|y,c) - w_y * s(x|c) - w_c * s(x|y)."""
    out = (1 + g.w_y + g.w_c) * full
    if g.w_y != 0:
        out = out - g.w_y * cam_only
    if g.w_c != 0:
        out = out - g.w_c * text_only
    return out


@torch.no_grad()
def guided_velocity(model: VDiT, x_t, t, text, plucker, g: GuidanceWeights = GuidanceWeights()):
    """Guided velocity with independent text and camera weights.

    ``plucker=None`` stands for a camera outside the conditioning gate: every
    pass then runs without camera and the result reduces to text guidance.
    Passes whose weight is zero are skipped.
    """
    full = model(x_t, t, text, plucker)
    if g.w_y == 0 and g.w_c == 0:
        return full
    cam_only = model(x_t, t, None, plucker) if g.w_y != 0 else None
    if g.w_c != 0:
        text_only = full if plucker is None else model(x_t, t, text, None)
    else:
        text_only = None
    return combine_guidance(full, cam_only, text_only, g)


@dataclass
class SampleResult:
    video: torch.Tensor  # [B, F, C, H, W]
    denoised: dict = field(default_factory=dict)  # t -> x0 prediction [B, F, C, H, W]


def timesteps(steps: int) -> list[float]:
    return [1.0 - i / steps for i in range(steps + 1)]


def sample(
    model: VDiT,
    shape,
    text=None,
    plucker=None,
    steps: int = 40,
    guidance: GuidanceWeights = GuidanceWeights(),
    gate=(0.6, 1.0),
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
    save_denoised: bool = False,
) -> SampleResult:
    """Euler integration of the velocity field from t = 1 to t = 0.

    ``shape`` is (B, F, C, H, W). Camera conditioning is supplied at a step
    iff its t lies in ``gate``. With ``save_denoised`` the clean-sample
    prediction x_t - t * v of every step is kept, keyed by t (rounded to
    1e-9), together with the final sample at t = 0.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    lo, hi = gate
    if not (0.0 <= lo <= hi <= 1.0):
        raise ConfigError(f"gate {gate} must satisfy 0 <= lo <= hi <= 1")
    dtype = next(model.parameters()).dtype
    x = noise.to(dtype) if noise is not None else torch.randn(*shape, generator=generator, dtype=dtype)
    B = x.shape[0]
    ts = timesteps(steps)
    out = SampleResult(x)
    was_training = model.training
    model.eval()
    try:
        for t_cur, t_next in zip(ts[:-1], ts[1:]):
            cam = plucker if (plucker is not None and lo <= t_cur <= hi) else None
            tt = torch.full((B,), t_cur, dtype=dtype)
            v = guided_velocity(model, x, tt, text, cam, guidance)
            if save_denoised:
                out.denoised[round(t_cur, 9)] = (x - t_cur * v).clone()
            x = x + (t_next - t_cur) * v
    finally:
        model.train(was_training)
    out.video = x
    if save_denoised:
        out.denoised[0.0] = x.clone()
    return out
