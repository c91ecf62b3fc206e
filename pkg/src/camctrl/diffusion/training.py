"""Rectified-flow objective and the two-phase training loop."""

from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import NoiseSchedule
from .model import VDiT


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: dict):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


def interpolate(x0: torch.Tensor, noise: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    tt = t.reshape(-1, *([1] * (x0.dim() - 1)))
    return (1 - tt) * x0 + tt * noise


def rectified_flow_loss(
    model,
    x0,
    t,
    noise,
    text=None,
    plucker=None,
    cam_mask=None,
    text_mask=None,
    loss_norm: bool = False,
):
    """Mean squared error between predicted velocity and ``noise - x0``.

    All randomness (t, noise, dropout masks) is passed in so the loss is a
    deterministic function of the parameters. With ``loss_norm`` each sample's
    error is divided by its expected squared target, 1 + mean(x0^2).
    """
    x_t = interpolate(x0, noise, t)
    target = noise - x0
    pred = model(x_t, t, text, plucker, cam_mask=cam_mask, text_mask=text_mask)
    err = (pred - target).pow(2).flatten(1).mean(1)
    if loss_norm:
        err = err / (1 + x0.pow(2).flatten(1).mean(1))
    return err.mean()


@dataclass
class TrainData:
    videos: torch.Tensor  # [N, F, C, H, W]
    tokens: torch.Tensor  # [N, L] long
    plucker: torch.Tensor | None = None  # [N, F, H, W, 6]

    def __len__(self) -> int:
        return self.videos.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    phase: int = 2
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    warmup: int = 0
    camera_dropout: float = 0.1
    text_dropout: float = 0.1
    loss_norm: bool = False
    seed: int = 0


@dataclass
class TrainResult:
    log: list = field(default_factory=list)  # (step, loss, t_mean)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "t_mean"])
        for step, loss, t_mean in self.log:
            w.writerow([step, repr(loss), repr(t_mean)])
        return buf.getvalue()


def trainable_names(model: VDiT, phase: int) -> list[str]:
    if phase == 1:
        return model.backbone_parameter_names()
    if phase == 2:
        return model.camera_parameter_names()
    raise ValueError(f"phase must be 1 or 2, got {phase}")


def cosine_lr(step: int, total: int, base: float, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    progress = (step - warmup) / max(total - warmup, 1)
    return base * 0.5 * (1 + math.cos(math.pi * min(progress, 1.0)))


def train(model: VDiT, data: TrainData, cfg: TrainConfig, sched: NoiseSchedule | None = None) -> TrainResult:
    """Phase 1 trains the backbone without camera; phase 2 freezes it and trains the camera branch.

    Batches, noise levels, noise and dropout masks come from generators seeded
    by ``cfg.seed``, so identical inputs give bit-identical parameters.
    """
    if sched is None:
        sched = NoiseSchedule.base() if cfg.phase == 1 else NoiseSchedule.camera()
    if cfg.phase == 2 and data.plucker is None:
        raise ValueError("phase 2 needs Plucker volumes")
    names = set(trainable_names(model, cfg.phase))
    params = []
    for n, p in model.named_parameters():
        p.requires_grad_(n in names)
        if n in names:
            params.append(p)
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    result = TrainResult()
    model.train()
    last_good = copy.deepcopy(model.state_dict())
    N = len(data)
    for step in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = cosine_lr(step, cfg.steps, cfg.lr, cfg.warmup)
        idx = torch.randint(0, N, (cfg.batch_size,), generator=gen)
        x0 = data.videos[idx].to(dtype)
        B = x0.shape[0]
        t = torch.as_tensor(sched.sample(rng, B), dtype=dtype)
        noise = torch.randn(x0.shape, generator=gen, dtype=dtype)
        text_mask = torch.rand(B, generator=gen) >= cfg.text_dropout
        plucker, cam_mask = None, None
        if cfg.phase == 2:
            plucker = data.plucker[idx].to(dtype)
            cam_mask = torch.rand(B, generator=gen) >= cfg.camera_dropout
        loss = rectified_flow_loss(
            model, x0, t, noise, data.tokens[idx], plucker, cam_mask, text_mask, cfg.loss_norm
        )
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            raise TrainingDiverged(step, last_good)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        result.log.append((step, loss.item(), float(t.mean())))
    for p in model.parameters():
        p.requires_grad_(True)
    return result
