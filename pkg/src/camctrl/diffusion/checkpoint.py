"""Checkpoints as one TNSR file per tensor plus a manifest and a config file."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..tensorio import read_tensor, write_tensor
from .config import ModelConfig, load_config, to_text
from .model import VDiT

MANIFEST = "manifest.txt"
CONFIG = "config.txt"


def save_checkpoint(model: VDiT, directory) -> None:
    """Write ``<name>.tnsr`` per state entry, ``manifest.txt`` (name, dims, file) and ``config.txt``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype(np.float32)
        fname = f"{name}.tnsr"
        write_tensor(arr if arr.ndim else arr.reshape(1), out / fname)
        dims = "x".join(str(d) for d in tensor.shape) or "scalar"
        lines.append(f"{name} {dims} {fname}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / CONFIG).write_text(to_text(model.cfg), encoding="utf-8")


def load_checkpoint(directory) -> VDiT:
    src = Path(directory)
    cfg = load_config(src / CONFIG)["model"]
    model = VDiT(cfg)
    state = model.state_dict()
    seen = set()
    for line in (src / MANIFEST).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, dims, fname = line.split()
        if name not in state:
            raise ValueError(f"checkpoint entry {name!r} unknown to the model")
        arr = read_tensor(src / fname)
        shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
        state[name] = torch.from_numpy(arr.reshape(shape).copy())
        seen.add(name)
    missing = set(state) - seen
    if missing:
        raise ValueError(f"checkpoint lacks {sorted(missing)[:5]}")
    model.load_state_dict(state)
    return model


def model_from_config(cfg: ModelConfig, seed: int = 0) -> VDiT:
    torch.manual_seed(seed)
    return VDiT(cfg)
