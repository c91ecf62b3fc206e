"""Procedural clips with exact cameras and ground-truth flow.

A textured plane at depth ``plane_depth`` is filmed by a pinhole camera that
yaws and translates at constant rates. Sprites are textured discs or squares
living on the plane; they either stay put (moving with the background in image
space) or slide across it. Because everything lies on one plane, ground-truth
flow is the exact projection of each material point into the next camera.

Camera yaw rate ``w > 0`` turns the camera to the right (camera-to-world
rotation ``R_y(w * f)``), so the background flows left at about
``-fx * W * w`` pixels per frame.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera_geometry import CameraTrajectory, rot_y
from .tensorio import write_tensor, write_trajectory

MODES = ("camera", "scene", "both", "static")

VOCAB = (
    "<pad> <null> a video clip of with and the camera pans moves static still fixed tripod "
    "scene sprite sprites object objects one two three four no textured background plane "
    "disc discs square squares moving sliding drifting slowly quickly across frame view "
    "red green blue warm cool bright dark smooth pattern shot handheld wide close steady "
    "motion turning looking around slow fast left right up"
).split()
assert len(VOCAB) == 64
TOKEN = {w: i for i, w in enumerate(VOCAB)}
CAPTION_LEN = 10


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SpriteSpec:
    center: tuple[float, float]  # pixels at frame 0 (x, y)
    radius: float  # pixels
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels / frame
    shape: str = "disc"
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    mode: str = "static"
    texture_seed: int = 0
    yaw_rate: float = 0.0  # rad / frame
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # scene units / frame
    sprites: tuple[SpriteSpec, ...] = ()
    n_frames: int = 17
    height: int = 32
    width: int = 32
    focal: tuple[float, float] = (1.0, 1.0)
    plane_depth: float = 10.0
    texture_wavelength: tuple[float, float] = (10.0, 20.0)  # background, pixels at frame 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise SynthError(f"unknown mode {self.mode!r}")
        moving_camera = self.yaw_rate != 0 or any(v != 0 for v in self.velocity)
        moving_sprites = any(s.velocity != (0.0, 0.0) for s in self.sprites)
        if self.mode in ("scene", "static") and moving_camera:
            raise SynthError(f"{self.mode} mode requires a fixed camera")
        if self.mode == "camera" and moving_sprites:
            raise SynthError("camera mode requires zero sprite velocities")
        if self.n_frames < 1 or self.height < 1 or self.width < 1:
            raise SynthError("clip dimensions must be positive")
        if not 0 < self.texture_wavelength[0] <= self.texture_wavelength[1]:
            raise SynthError("texture wavelength range must be positive and ordered")
        for s in self.sprites:
            if 2 * s.radius > min(self.height, self.width):
                raise SynthError(f"sprite of radius {s.radius} larger than the frame")
            if s.shape not in ("disc", "square"):
                raise SynthError(f"unknown sprite shape {s.shape!r}")


@dataclass
class SynthClip:
    video: np.ndarray  # [F, 3, H, W] in [-1, 1]
    trajectory: CameraTrajectory
    gt_flow: np.ndarray  # [F-1, H, W, 2]
    caption: str
    tokens: np.ndarray
    spec: SceneSpec
    sprite_mask: np.ndarray = field(repr=False, default=None)  # [F, H, W] top sprite id or -1


def tokenize(caption: str, length: int = CAPTION_LEN) -> np.ndarray:
    ids = [TOKEN[w] for w in caption.split()]
    if len(ids) > length:
        raise SynthError(f"caption longer than {length} tokens")
    return np.array(ids + [TOKEN["<pad>"]] * (length - len(ids)), dtype=np.int64)


def caption_for(spec: SceneSpec) -> str:
    count = ("no", "one", "two", "three", "four")[min(len(spec.sprites), 4)]
    noun = "sprite" if len(spec.sprites) == 1 else "sprites"
    moving = any(s.velocity != (0.0, 0.0) for s in spec.sprites)
    if spec.mode in ("static", "scene"):
        camera = "static camera"
    else:
        camera = "camera pans"
    verb = "moving" if moving else "still"
    return f"a video with {camera} and {count} {verb} {noun}"


class _Texture:
    """Smooth RGB texture: a sum of random plane waves per channel."""

    def __init__(self, seed: int, wavelength: tuple[float, float], n_waves: int = 6, contrast=1.0):
        rng = np.random.default_rng(seed)
        lam = rng.uniform(*wavelength, size=(3, n_waves))
        theta = rng.uniform(0, 2 * np.pi, size=(3, n_waves))
        self.kx = 2 * np.pi * np.cos(theta) / lam
        self.ky = 2 * np.pi * np.sin(theta) / lam
        self.phase = rng.uniform(0, 2 * np.pi, size=(3, n_waves))
        self.amp = rng.uniform(0.5, 1.0, size=(3, n_waves)) / np.sqrt(n_waves)
        self.offset = rng.uniform(-0.3, 0.3, size=3)
        self.contrast = contrast

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        arg = (
            self.kx[:, :, None] * X.ravel()[None, None]
            + self.ky[:, :, None] * Y.ravel()[None, None]
            + self.phase[:, :, None]
        )
        val = (self.amp[:, :, None] * np.sin(arg)).sum(1)
        val = np.tanh(self.contrast * 1.6 * val + self.offset[:, None])
        return val.reshape((3,) + X.shape)


def _camera(spec: SceneSpec) -> CameraTrajectory:
    F = spec.n_frames
    fx, fy = spec.focal
    R_c2w = np.stack([rot_y(spec.yaw_rate * f) for f in range(F)])
    centers = np.arange(F)[:, None] * np.asarray(spec.velocity, dtype=np.float64)[None]
    R = np.swapaxes(R_c2w, 1, 2)
    t = -np.einsum("fij,fj->fi", R, centers)
    return CameraTrajectory(np.tile([fx, fy, 0.5, 0.5], (F, 1)), R, t)


def _project(points: np.ndarray, K, R, t, H: int, W: int):
    """World points [..., 3] -> continuous pixel coordinates (col, row), centers at integers."""
    fx, fy, cx, cy = K
    cam = points @ R.T + t
    z = cam[..., 2]
    col = (fx * cam[..., 0] / z + cx) * W - 0.5
    row = (fy * cam[..., 1] / z + cy) * H - 0.5
    return col, row, z


def _plane_hits(K, R, t, H: int, W: int, depth: float) -> np.ndarray:
    fx, fy, cx, cy = K
    u = ((np.arange(W) + 0.5) / W - cx) / fx
    v = ((np.arange(H) + 0.5) / H - cy) / fy
    U, V = np.meshgrid(u, v)
    d = np.stack([U, V, np.ones_like(U)], axis=-1) @ R  # camera -> world directions
    o = -R.T @ t
    if np.any(d[..., 2] <= 1e-6):
        raise SynthError("camera looks away from the background plane")
    s = (depth - o[2]) / d[..., 2]
    if np.any(s <= 0):
        raise SynthError("background plane behind the camera")
    return o + s[..., None] * d


def render_clip(spec: SceneSpec, seed: int = 0) -> SynthClip:
    """Render ``spec``; ``seed`` only feeds sprite textures not pinned by ``spec``."""
    spec.validate()
    F, H, W = spec.n_frames, spec.height, spec.width
    fx, fy = spec.focal
    Z = spec.plane_depth
    traj = _camera(spec)
    px_to_plane = np.array([Z / (fx * W), Z / (fy * H)])
    # frame-0 identity-like mapping from pixel to plane coordinates
    origin0 = _plane_hits(traj.intrinsics[0], traj.rotations[0], traj.translations[0], 1, 1, Z)[0, 0]

    def pixel_to_plane(xy):
        c = np.asarray(xy, dtype=np.float64)
        return origin0[:2] + (c - np.array([W / 2, H / 2])) * px_to_plane

    lo, hi = spec.texture_wavelength
    background = _Texture(spec.texture_seed, (lo * px_to_plane[0], hi * px_to_plane[0]))
    sprites = []
    for k, s in enumerate(spec.sprites):
        sprites.append(
            dict(
                center=pixel_to_plane(s.center),
                radius=s.radius * px_to_plane[0],
                velocity=np.asarray(s.velocity, dtype=np.float64) * px_to_plane,
                shape=s.shape,
                texture=_Texture(
                    s.texture_seed + 7919 * (seed + 1), (4 * px_to_plane[0], 8 * px_to_plane[0]), contrast=1.5
                ),
            )
        )

    video = np.empty((F, 3, H, W))
    flow = np.zeros((max(F - 1, 0), H, W, 2))
    owner = np.full((F, H, W), -1, dtype=np.int64)
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    for f in range(F):
        K, R, t = traj.intrinsics[f], traj.rotations[f], traj.translations[f]
        P = _plane_hits(K, R, t, H, W, Z)
        X, Y = P[..., 0], P[..., 1]
        img = background(X, Y)
        top = np.full((H, W), -1)
        for k, sp in enumerate(sprites):
            c = sp["center"] + f * sp["velocity"]
            dx, dy = X - c[0], Y - c[1]
            if sp["shape"] == "disc":
                inside = dx ** 2 + dy ** 2 <= sp["radius"] ** 2
            else:
                inside = (np.abs(dx) <= sp["radius"]) & (np.abs(dy) <= sp["radius"])
            if inside.any():
                tex = sp["texture"](dx, dy)
                img = np.where(inside[None], tex, img)
                top[inside] = k
        video[f] = img
        owner[f] = top
        if f + 1 < F:
            moved = P.copy()
            for k, sp in enumerate(sprites):
                sel = top == k
                moved[sel, :2] += sp["velocity"]
            col, row, _ = _project(
                moved, traj.intrinsics[f + 1], traj.rotations[f + 1], traj.translations[f + 1], H, W
            )
            flow[f, ..., 0] = col - cols
            flow[f, ..., 1] = row - rows
    caption = caption_for(spec)
    return SynthClip(video, traj, flow, caption, tokenize(caption), spec, owner)


def allocate(n: int, mix: dict) -> dict:
    """Largest-remainder allocation of ``n`` items across modes."""
    total = sum(mix.values())
    if any(p < 0 for p in mix.values()) or not np.isclose(total, 1.0, atol=1e-9):
        raise SynthError(f"mode proportions must be nonnegative and sum to 1, got {mix}")
    for m in mix:
        if m not in MODES:
            raise SynthError(f"unknown mode {m!r}")
    quotas = {m: n * p for m, p in mix.items()}
    counts = {m: int(np.floor(q)) for m, q in quotas.items()}
    rest = n - sum(counts.values())
    order = sorted(mix, key=lambda m: (-(quotas[m] - counts[m]), MODES.index(m)))
    for m in order[:rest]:
        counts[m] += 1
    return counts


@dataclass(frozen=True)
class ClipParams:
    """Ranges for randomly drawn scene parameters."""

    n_frames: int = 17
    height: int = 32
    width: int = 32
    yaw_rate: tuple[float, float] = (0.025, 0.045)
    dolly: tuple[float, float] = (0.01, 0.03)  # fraction of plane depth per frame
    sprite_speed: tuple[float, float] = (0.5, 1.5)
    sprite_radius: tuple[float, float] = (3.0, 6.0)
    max_sprites: int = 3
    texture_wavelength: tuple[float, float] = (10.0, 20.0)


def random_spec(mode: str, rng: np.random.Generator, params: ClipParams = ClipParams()) -> SceneSpec:
    H, W = params.height, params.width
    camera_moves = mode in ("camera", "both")
    sprites_move = mode in ("scene", "both", "static")
    yaw, vz = 0.0, 0.0
    if camera_moves:
        yaw = float(rng.uniform(*params.yaw_rate) * rng.choice([-1.0, 1.0]))
        vz = float(rng.uniform(*params.dolly) * rng.choice([-1.0, 1.0]) * SceneSpec.plane_depth)
    lo = 1 if sprites_move else 0
    n_sprites = int(rng.integers(lo, params.max_sprites + 1))
    sprites = []
    for k in range(n_sprites):
        radius = float(rng.uniform(*params.sprite_radius))
        radius = min(radius, 0.5 * min(H, W) - 1)
        vel = (0.0, 0.0)
        if sprites_move:
            speed = rng.uniform(*params.sprite_speed)
            ang = rng.uniform(0, 2 * np.pi)
            vel = (float(speed * np.cos(ang)), float(speed * np.sin(ang)))
        sprites.append(
            SpriteSpec(
                center=(float(rng.uniform(0.25, 0.75) * W), float(rng.uniform(0.25, 0.75) * H)),
                radius=radius,
                velocity=vel,
                shape=str(rng.choice(["disc", "square"])),
                texture_seed=int(rng.integers(2 ** 31)),
            )
        )
    return SceneSpec(
        mode=mode,
        texture_seed=int(rng.integers(2 ** 31)),
        yaw_rate=yaw,
        velocity=(0.0, 0.0, vz),
        sprites=tuple(sprites),
        n_frames=params.n_frames,
        height=H,
        width=W,
        texture_wavelength=params.texture_wavelength,
    )


MANIFEST_FIELDS = ("clip_id", "mode", "yaw_rate", "dolly", "n_sprites", "mean_sprite_speed", "caption")


def manifest_row(clip_id: str, spec: SceneSpec, caption: str) -> dict:
    speeds = [float(np.hypot(*s.velocity)) for s in spec.sprites]
    return {
        "clip_id": clip_id,
        "mode": spec.mode,
        "yaw_rate": repr(float(spec.yaw_rate)),
        "dolly": repr(float(spec.velocity[2])),
        "n_sprites": str(len(spec.sprites)),
        "mean_sprite_speed": repr(float(np.mean(speeds))) if speeds else "0.0",
        "caption": caption,
    }


def make_dataset(
    n_clips: int,
    mix: dict,
    seed: int = 0,
    out_dir=None,
    params: ClipParams = ClipParams(),
):
    """Render ``n_clips`` clips with exact per-mode counts.

    Modes are allocated by largest remainder, then shuffled deterministically.
    When ``out_dir`` is given, each clip is written as
    ``<id>.video.tnsr``, ``<id>.flow.tnsr``, ``<id>.traj.txt`` plus a
    ``manifest.csv``.

    Returns:
        (list of SynthClip, list of manifest rows)
    """
    counts = allocate(n_clips, mix)
    modes = [m for m in MODES if m in counts for _ in range(counts[m])]
    rng = np.random.default_rng(seed)
    modes = [modes[i] for i in rng.permutation(len(modes))]
    clips, rows = [], []
    for i, mode in enumerate(modes):
        clip_rng = np.random.default_rng([seed, i])
        spec = random_spec(mode, clip_rng, params)
        clip = render_clip(spec, seed=i)
        clip_id = f"clip_{i:05d}"
        clips.append(clip)
        rows.append(manifest_row(clip_id, spec, clip.caption))
    if out_dir is not None:
        write_dataset(clips, rows, out_dir)
    return clips, rows


def write_dataset(clips, rows, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for clip, row in zip(clips, rows):
        cid = row["clip_id"]
        write_tensor(clip.video, out / f"{cid}.video.tnsr")
        if clip.gt_flow.shape[0] > 0:
            write_tensor(clip.gt_flow, out / f"{cid}.flow.tnsr")
        write_trajectory(clip.trajectory.to_file(cid), out / f"{cid}.traj.txt")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (out / "manifest.csv").write_text(buf.getvalue(), encoding="utf-8")


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def interior_mask(clip: SynthClip, f: int, margin: int = 2) -> np.ndarray:
    """Pixels away from image borders and sprite boundaries at frames f and f+1."""
    F, H, W = clip.sprite_mask.shape
    mask = np.zeros((H, W), bool)
    mask[margin:H - margin, margin:W - margin] = True
    from scipy import ndimage

    for g in (f, min(f + 1, F - 1)):
        owner = clip.sprite_mask[g]
        edge = np.zeros((H, W), bool)
        for k in np.unique(owner):
            region = owner == k
            edge |= region & ~ndimage.binary_erosion(region, iterations=margin)
            edge |= ~region & ndimage.binary_dilation(region, iterations=margin)
        mask &= ~edge
    return mask


def with_mode(spec: SceneSpec, **changes) -> SceneSpec:
    return replace(spec, **changes)
