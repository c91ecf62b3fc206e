"""Model, schedule and guidance settings plus the flat key=value config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


FEEDBACK_MODES = ("camera_queries_video", "video_queries_camera", "none")
CAM_INPUTS = ("absolute", "relative")


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 8
    d_main: int = 256
    n_heads: int = 4
    patch: int = 2
    channels: int = 3
    temporal_compress: int = 4
    d_cam: int = 64
    cam_heads: int = 4
    cam_conv_channels: tuple = (16, 32)
    # 1-based main blocks receiving camera tokens; None means the first quarter
    cam_inject_blocks: tuple | None = None
    rope_split: tuple = (2, 1, 1)
    rope_base: float = 10_000.0
    vocab: int = 64
    text_len: int = 10
    mlp_ratio: int = 4
    feedback: str = "camera_queries_video"
    cam_input: str = "absolute"  # "relative" feeds Plucker deltas from the first frame

    def __post_init__(self):
        if self.cam_inject_blocks is None:
            object.__setattr__(self, "cam_inject_blocks", tuple(range(1, max(1, self.n_blocks // 4) + 1)))
        object.__setattr__(self, "cam_inject_blocks", tuple(sorted(set(self.cam_inject_blocks))))
        object.__setattr__(self, "cam_conv_channels", tuple(self.cam_conv_channels))
        object.__setattr__(self, "rope_split", tuple(self.rope_split))
        self.validate()

    def validate(self) -> None:
        if self.d_main % self.n_heads or self.d_cam % self.cam_heads:
            raise ConfigError("widths must be divisible by head counts")
        if self.rope_split != (2, 1, 1):
            raise ConfigError("only the 2:1:1 temporal:vertical:horizontal split is supported")
        for width, heads in ((self.d_main, self.n_heads), (self.d_cam, self.cam_heads)):
            if (width // heads) % 8:
                raise ConfigError(f"head width {width // heads} must be a multiple of 8 for the 2:1:1 rotary split")
        if not set(self.cam_inject_blocks) <= set(range(1, self.n_blocks + 1)):
            raise ConfigError(f"cam_inject_blocks {self.cam_inject_blocks} outside 1..{self.n_blocks}")
        if self.temporal_compress != 4 or len(self.cam_conv_channels) != 2:
            raise ConfigError("the camera encoder uses two stride-2 convolutions (4x compression)")
        if self.feedback not in FEEDBACK_MODES:
            raise ConfigError(f"feedback must be one of {FEEDBACK_MODES}")
        if self.cam_input not in CAM_INPUTS:
            raise ConfigError(f"cam_input must be one of {CAM_INPUTS}")
        if self.patch < 1 or self.vocab < 2:
            raise ConfigError("patch must be >= 1 and vocab >= 2")

    @property
    def head_dim(self) -> int:
        return self.d_main // self.n_heads

    def check_video(self, F: int, H: int, W: int) -> None:
        if H % self.patch or W % self.patch:
            raise ConfigError(f"patch {self.patch} must divide H={H} and W={W}")
        if F < self.temporal_compress:
            raise ConfigError(f"need at least {self.temporal_compress} frames, got {F}")


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "logit_normal"
    loc: float = 0.0
    scale: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    shift: float = 1.0  # draws are passed through shift_time; 1 leaves them unchanged

    def __post_init__(self):
        if self.kind not in ("logit_normal", "truncated_normal"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not (np.isfinite(self.shift) and self.shift > 0):
            raise ConfigError("schedule shift must be positive")
        if self.scale < 0 or not (0 <= self.lo <= self.hi <= 1):
            raise ConfigError("invalid schedule parameters")
        if self.kind == "truncated_normal" and self.scale == 0 and not (self.lo <= self.loc <= self.hi):
            raise ConfigError("degenerate schedule location outside bounds")

    @classmethod
    def base(cls) -> "NoiseSchedule":
        return cls("logit_normal", 0.0, 1.0)

    @classmethod
    def camera(cls) -> "NoiseSchedule":
        return cls("truncated_normal", 0.8, 0.075, 0.6, 1.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` noise levels (float64)."""
        if self.kind == "logit_normal":
            z = rng.standard_normal(n)
            return shift_time(1.0 / (1.0 + np.exp(-(self.loc + self.scale * z))), self.shift)
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = self.loc + self.scale * rng.standard_normal(max(n - filled, 16))
            keep = draw[(draw >= self.lo) & (draw <= self.hi)][: n - filled]
            out[filled:filled + keep.size] = keep
            filled += keep.size
        return shift_time(out, self.shift)


def shift_time(t, shift: float):
    """Monotone map s*t / (1 + (s-1)*t) of [0, 1] onto itself.

    Small frames reach a given signal-to-noise ratio at a higher t than large
    ones, so a shift s > 1 moves a schedule tuned for large frames upward.
    """
    if shift == 1.0:
        return t
    return shift * t / (1.0 + (shift - 1.0) * t)


def sample_noise_level(sched: NoiseSchedule, rng: np.random.Generator) -> float:
    return float(sched.sample(rng, 1)[0])


@dataclass(frozen=True)
class GuidanceWeights:
    w_y: float = 0.0
    w_c: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.w_y) and np.isfinite(self.w_c)):
            raise ConfigError("guidance weights must be finite")


# ---------------------------------------------------------------------------
# flat key=value files


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, current):
    if isinstance(current, bool):
        if raw not in ("true", "false", "True", "False"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple) or current is None:
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def to_text(*configs) -> str:
    """Serialize dataclasses as ``section.key=value`` lines."""
    lines = []
    for cfg in configs:
        section = _SECTIONS_BY_TYPE[type(cfg)]
        for f in dataclasses.fields(cfg):
            lines.append(f"{section}.{f.name}={_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, items: dict):
    """Return ``cfg`` with string overrides applied; unknown keys are rejected."""
    names = {f.name for f in dataclasses.fields(cfg)}
    unknown = set(items) - names
    if unknown:
        raise ConfigError(f"unknown {type(cfg).__name__} keys: {sorted(unknown)}")
    defaults = type(cfg)()
    changes = {k: _parse(v, getattr(defaults, k) if getattr(cfg, k) is None else getattr(cfg, k)) for k, v in items.items()}
    if isinstance(cfg, ModelConfig) and "n_blocks" in changes and "cam_inject_blocks" not in changes:
        # a derived default follows the new depth; an explicit choice is kept
        if cfg.cam_inject_blocks == ModelConfig(n_blocks=cfg.n_blocks, cam_inject_blocks=None).cam_inject_blocks:
            changes["cam_inject_blocks"] = None
    return dataclasses.replace(cfg, **changes)


def parse_config_text(text: str) -> dict:
    """Parse ``section.key=value`` lines into section -> {key: raw string}."""
    out: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"line {n}: unknown section {section!r}")
        out.setdefault(section, {})[name] = value
    return out


def load_config(path, base: dict | None = None) -> dict:
    """Read a config file; returns section -> dataclass instance."""
    parsed = parse_config_text(Path(path).read_text(encoding="utf-8"))
    out = dict(base or {s: t() for s, t in _SECTIONS.items()})
    for section, items in parsed.items():
        out[section] = apply_overrides(out[section], items)
    return out


_SECTIONS = {"model": ModelConfig, "schedule": NoiseSchedule, "guidance": GuidanceWeights}
_SECTIONS_BY_TYPE = {v: k for k, v in _SECTIONS.items()}


def register_section(name: str, cls) -> None:
    _SECTIONS[name] = cls
    _SECTIONS_BY_TYPE[cls] = name
