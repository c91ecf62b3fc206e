"""Toy video diffusion transformer with a camera-conditioning branch.

Video tokens come from a spatial patchifier over every frame. Each main block
applies timestep-modulated self-attention with 3D rotary positions, text
cross-attention and an MLP. The camera branch encodes per-pixel Plucker
sequences with causal strided 1D convolutions (4x temporal compression),
patchifies them like the video, and runs one lightweight block per gated main
block. Each camera block reads the current video tokens through feedback
cross-attention and its output is added to the video tokens through a
zero-initialized projection right before the gated main block.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, ModelConfig

PAD_TOKEN = 0
NULL_TOKEN = 1


# ---------------------------------------------------------------------------
# rotary positions


def rope_tables(pos: torch.Tensor, head_dim: int, base: float = 10_000.0):
    """cos/sin tables [N, head_dim/2] for positions [N, 3] = (time, row, col).

    Rotation pairs are split 2:1:1 between the temporal, vertical and
    horizontal axes.
    """
    dims = (head_dim // 2, head_dim // 4, head_dim // 4)
    angles = []
    for axis, d in enumerate(dims):
        freqs = base ** (-torch.arange(0, d, 2, dtype=pos.dtype, device=pos.device) / d)
        angles.append(pos[:, axis : axis + 1] * freqs[None])
    ang = torch.cat(angles, dim=1)
    return torch.cos(ang), torch.sin(ang)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate interleaved pairs of ``x`` [..., N, head_dim]."""
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = torch.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], dim=-1)
    return out.flatten(-2)


def video_positions(F_: int, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    f, y, x = torch.meshgrid(torch.arange(F_), torch.arange(h), torch.arange(w), indexing="ij")
    return torch.stack([f, y, x], dim=-1).reshape(-1, 3).to(dtype)


def camera_positions(Fc: int, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    # compressed step j covers frames 4j..4j+3; its center is 4j + 1.5
    pos = video_positions(Fc, h, w, dtype)
    pos[:, 0] = 4 * pos[:, 0] + 1.5
    return pos


# ---------------------------------------------------------------------------
# layers


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def modulate(x, shift, scale):
    return x * (1 + scale[:, None]) + shift[:, None]


class Attention(nn.Module):
    """Multi-head attention with RMS-normalized queries/keys and optional rotary positions."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.q_norm = RMSNorm(self.head_dim)
        self.k_norm = RMSNorm(self.head_dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x):
        B, N, _ = x.shape
        return x.view(B, N, self.heads, self.head_dim).transpose(1, 2)

    def logits(self, x, ctx, rope_q=None, rope_k=None):
        q = self.q_norm(self._split(self.q(x)))
        k = self.k_norm(self._split(self.k(ctx)))
        if rope_q is not None:
            q = apply_rope(q, *rope_q)
        if rope_k is not None:
            k = apply_rope(k, *rope_k)
        return q, k

    def forward(self, x, ctx=None, rope_q=None, rope_k=None):
        ctx = x if ctx is None else ctx
        q, k = self.logits(x, ctx, rope_q, rope_k)
        v = self._split(self.v(ctx))
        o = F.scaled_dot_product_attention(q, k, v)
        o = o.transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.out(o)


class MLP(nn.Module):
    def __init__(self, dim: int, ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, ratio * dim)
        self.fc2 = nn.Linear(ratio * dim, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x), approximate="tanh"))


def timestep_embedding(t: torch.Tensor, dim: int = 64, max_period: float = 10_000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    arg = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.cos(arg), torch.sin(arg)], dim=-1)


class MainBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_main
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(d, cfg.n_heads)
        self.norm_x = nn.LayerNorm(d, eps=1e-6)
        self.cross = Attention(d, cfg.n_heads)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.mlp = MLP(d, cfg.mlp_ratio)
        self.ada = nn.Linear(d, 6 * d)
        # used only when video tokens query camera tokens (alternative feedback reading)
        self.cam_cross = None
        if cfg.feedback == "video_queries_camera":
            self.cam_norm = nn.LayerNorm(d, eps=1e-6)
            self.cam_cross = Attention(d, cfg.n_heads, kv_dim=cfg.d_cam)

    def forward(self, x, temb, text, rope, cam=None, cam_rope=None):
        s1, sc1, g1, s2, sc2, g2 = self.ada(F.silu(temb)).chunk(6, dim=-1)
        x = x + g1[:, None] * self.attn(modulate(self.norm1(x), s1, sc1), rope_q=rope, rope_k=rope)
        x = x + self.cross(self.norm_x(x), text)
        if self.cam_cross is not None and cam is not None:
            x = x + self.cam_cross(self.cam_norm(x), cam, rope_q=rope, rope_k=cam_rope)
        return x + g2[:, None] * self.mlp(modulate(self.norm2(x), s2, sc2))


class CameraBlock(nn.Module):
    """Camera-branch block: self-attention, feedback cross-attention, MLP; no text."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_cam
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(d, cfg.cam_heads)
        self.feedback = None
        if cfg.feedback == "camera_queries_video":
            self.norm_f = nn.LayerNorm(d, eps=1e-6)
            self.feedback = Attention(d, cfg.cam_heads, kv_dim=cfg.d_main)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.mlp = MLP(d, cfg.mlp_ratio)
        self.ada = nn.Linear(cfg.d_main, 6 * d)
        self.inject = nn.Linear(d, cfg.d_main)

    def forward(self, c, video, temb, rope_c, rope_v):
        s1, sc1, g1, s2, sc2, g2 = self.ada(F.silu(temb)).chunk(6, dim=-1)
        c = c + g1[:, None] * self.attn(modulate(self.norm1(c), s1, sc1), rope_q=rope_c, rope_k=rope_c)
        if self.feedback is not None:
            c = c + self.feedback(self.norm_f(c), video, rope_q=rope_c, rope_k=rope_v)
        return c + g2[:, None] * self.mlp(modulate(self.norm2(c), s2, sc2))


class CausalConv1d(nn.Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 2):
        super().__init__()
        self.pad = kernel - stride
        self.conv = nn.Conv1d(cin, cout, kernel, stride)

    def forward(self, x):
        return self.conv(F.pad(x, (self.pad, 0)))


class CameraEncoder(nn.Module):
    """[B, F, H, W, 6] Plucker volume -> [B, (F//4)*(H/p)*(W/p), d_cam] tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.cam_conv_channels
        self.conv1 = CausalConv1d(6, c1)
        self.conv2 = CausalConv1d(c1, c2)
        self.patch = cfg.patch
        self.proj = nn.Linear(c2 * cfg.patch ** 2, cfg.d_cam)

    def temporal(self, plucker: torch.Tensor) -> torch.Tensor:
        B, F_, H, W, _ = plucker.shape
        seq = plucker.permute(0, 2, 3, 4, 1).reshape(B * H * W, 6, F_)
        out = self.conv2(F.silu(self.conv1(seq)))
        Fc = out.shape[-1]
        return out.reshape(B, H, W, -1, Fc).permute(0, 4, 1, 2, 3)  # [B, Fc, H, W, C]

    def forward(self, plucker: torch.Tensor) -> torch.Tensor:
        z = self.temporal(plucker)
        B, Fc, H, W, C = z.shape
        p = self.patch
        z = z.reshape(B, Fc, H // p, p, W // p, p, C).permute(0, 1, 2, 4, 3, 5, 6)
        return self.proj(z.reshape(B, Fc * (H // p) * (W // p), p * p * C))


# ---------------------------------------------------------------------------
# full model


class VDiT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, p = cfg.d_main, cfg.patch
        self.patch_embed = nn.Linear(cfg.channels * p * p, d)
        self.t_embed = nn.Sequential(nn.Linear(64, d), nn.SiLU(), nn.Linear(d, d))
        self.text_embed = nn.Embedding(cfg.vocab, d)
        self.blocks = nn.ModuleList([MainBlock(cfg) for _ in range(cfg.n_blocks)])
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.final_ada = nn.Linear(d, 2 * d)
        self.final = nn.Linear(d, cfg.channels * p * p)
        self.cam_encoder = CameraEncoder(cfg)
        self.cam_blocks = nn.ModuleDict({str(b): CameraBlock(cfg) for b in cfg.cam_inject_blocks})
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.text_embed.weight, std=0.02)
        for blk in self.blocks:
            nn.init.zeros_(blk.ada.weight)
            nn.init.zeros_(blk.ada.bias)
            if blk.cam_cross is not None:
                nn.init.zeros_(blk.cam_cross.out.weight)
        for cb in self.cam_blocks.values():
            nn.init.zeros_(cb.ada.weight)
            nn.init.zeros_(cb.ada.bias)
            nn.init.zeros_(cb.inject.weight)
            nn.init.zeros_(cb.inject.bias)
        for m in (self.final_ada, self.final):
            nn.init.zeros_(m.weight)
            nn.init.zeros_(m.bias)

    # parameter groups ------------------------------------------------------

    def camera_parameter_names(self) -> list[str]:
        names = [n for n, _ in self.named_parameters() if n.startswith(("cam_encoder.", "cam_blocks."))]
        names += [n for n, _ in self.named_parameters() if ".cam_cross." in n or ".cam_norm." in n]
        return names

    def backbone_parameter_names(self) -> list[str]:
        cam = set(self.camera_parameter_names())
        return [n for n, _ in self.named_parameters() if n not in cam]

    # tokens ------------------------------------------------------------------

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        B, F_, C, H, W = x.shape
        p = self.cfg.patch
        x = x.reshape(B, F_, C, H // p, p, W // p, p).permute(0, 1, 3, 5, 2, 4, 6)
        return x.reshape(B, F_ * (H // p) * (W // p), C * p * p)

    def unpatchify(self, tok: torch.Tensor, F_: int, H: int, W: int) -> torch.Tensor:
        B = tok.shape[0]
        p, C = self.cfg.patch, self.cfg.channels
        x = tok.reshape(B, F_, H // p, W // p, C, p, p).permute(0, 1, 4, 2, 5, 3, 6)
        return x.reshape(B, F_, C, H, W)

    def text_context(self, tokens: torch.Tensor | None, batch: int, text_mask=None) -> torch.Tensor:
        if tokens is None:
            tokens = torch.full((batch, self.cfg.text_len), NULL_TOKEN, dtype=torch.long)
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if text_mask is not None:
            tokens = torch.where(text_mask[:, None], tokens, torch.full_like(tokens, NULL_TOKEN))
        return self.text_embed(tokens)

    def align_camera(self, c: torch.Tensor, F_: int, h: int, w: int) -> torch.Tensor:
        """Repeat camera tokens along time so frame f reads compressed step min(f // 4, Fc - 1)."""
        B, _, D = c.shape
        Fc = c.shape[1] // (h * w)
        idx = torch.clamp(torch.arange(F_) // self.cfg.temporal_compress, max=Fc - 1)
        return c.reshape(B, Fc, h * w, D)[:, idx].reshape(B, F_ * h * w, D)

    def encode_camera(self, plucker: torch.Tensor) -> torch.Tensor:
        if self.cfg.cam_input == "relative":
            # every normalized trajectory starts at the identity, so frame 0 carries no information
            plucker = plucker - plucker[:, :1]
        return self.cam_encoder(plucker)

    # forward -----------------------------------------------------------------

    def forward(self, x_t, t, text=None, plucker=None, cam_mask=None, text_mask=None, return_activations=False):
        """Velocity prediction for noisy video ``x_t`` [B, F, C, H, W] at levels ``t`` [B].

        ``plucker`` [B, F, H, W, 6] enables the camera branch; ``cam_mask`` [B]
        (bool) zeroes its contribution per sample. ``text_mask`` [B] replaces
        masked captions by the null token.
        """
        cfg = self.cfg
        B, F_, C, H, W = x_t.shape
        cfg.check_video(F_, H, W)
        p = cfg.patch
        h, w = H // p, W // p
        dtype = x_t.dtype
        t = torch.as_tensor(t, dtype=dtype).reshape(-1).expand(B)
        x = self.patch_embed(self.patchify(x_t))
        temb = self.t_embed(timestep_embedding(t))
        ctx = self.text_context(text, B, text_mask)
        rope_v = rope_tables(video_positions(F_, h, w, dtype), cfg.head_dim, cfg.rope_base)

        use_cam = plucker is not None and len(cfg.cam_inject_blocks) > 0
        if use_cam:
            if tuple(plucker.shape) != (B, F_, H, W, 6):
                raise ConfigError(f"plucker shape {tuple(plucker.shape)} does not match video {(B, F_, H, W, 6)}")
            c = self.encode_camera(plucker.to(dtype))
            Fc = c.shape[1] // (h * w)
            cam_pos = camera_positions(Fc, h, w, dtype)
            cam_hd = cfg.d_cam // cfg.cam_heads
            rope_c = rope_tables(cam_pos, cam_hd, cfg.rope_base)
            rope_cv = rope_tables(video_positions(F_, h, w, dtype), cam_hd, cfg.rope_base)
            rope_vc = rope_tables(cam_pos, cfg.head_dim, cfg.rope_base)
            gate = None if cam_mask is None else torch.as_tensor(cam_mask, dtype=dtype).reshape(B, 1, 1)

        acts = []
        for i, blk in enumerate(self.blocks, start=1):
            cam_tokens = None
            if use_cam and i in cfg.cam_inject_blocks:
                cb = self.cam_blocks[str(i)]
                c = cb(c, x, temb, rope_c, rope_cv)
                inj = self.align_camera(cb.inject(c), F_, h, w)
                x = x + (inj if gate is None else inj * gate)
                cam_tokens = c if gate is None else c * gate
            x = blk(x, temb, ctx, rope_v, cam_tokens, rope_vc if use_cam else None)
            if return_activations:
                acts.append(x)
        shift, scale = self.final_ada(F.silu(temb)).chunk(2, dim=-1)
        out = self.unpatchify(self.final(modulate(self.final_norm(x), shift, scale)), F_, H, W)
        return (out, acts) if return_activations else out
