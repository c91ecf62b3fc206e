"""Command-line front end: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error. Tabular output is CSV.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import camera_geometry as cg
from . import flow_spectral as fs
from . import metric_rescale as mr
from . import probing, synth
from .tensorio import parse_trajectory, read_tensor, write_tensor, write_trajectory

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def stage_seed(seed: int, stage: str) -> int:
    """Deterministic 63-bit sub-seed for a named stage."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _threads() -> int | None:
    raw = os.environ.get("AC3D_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AC3D_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"AC3D_THREADS must be a positive integer, got {raw!r}")
    return n


def _torch():
    import torch

    n = _threads()
    if n is not None:
        torch.set_num_threads(n)
    return torch


def _write_text(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _load_trajectory(path) -> cg.CameraTrajectory:
    return cg.build_trajectory(parse_trajectory(path))


def _flow_config(args) -> fs.FlowConfig:
    return fs.FlowConfig(
        levels=args.levels, smoothness=args.smoothness, iterations=args.iterations, n_bins=args.bins
    )


# ---------------------------------------------------------------------------
# cameras


def cmd_cameras_parse(args) -> None:
    raw = parse_trajectory(args.trajectory)
    traj = cg.build_trajectory(raw)
    tgt = cg.euler_targets(traj)
    header = ["frame", "timestamp", "fx", "fy", "cx", "cy", "pitch", "yaw", "roll", "tx", "ty", "tz"]
    rows = [[f, raw.timestamps[f], *traj.intrinsics[f], *tgt[f]] for f in range(len(traj))]
    _write_text(_csv(header, rows), args.out)
    if args.targets is not None:
        write_tensor(tgt.reshape(1, -1), args.targets)


def cmd_cameras_plucker(args) -> None:
    traj = _load_trajectory(args.trajectory)
    if args.normalize:
        traj = cg.normalize_to_first(traj)
    write_tensor(cg.plucker_volume(traj, args.height, args.width), args.out)


def cmd_cameras_rescale(args) -> None:
    raw = parse_trajectory(args.trajectory)
    traj = cg.build_trajectory(raw)
    points = read_tensor(args.points).astype(np.float64)
    depths = read_tensor(args.depths).astype(np.float64)
    out, sol = mr.rescale_sequence(traj, points, depths, per_frame=args.per_frame)
    write_trajectory(out.to_file(raw.source_id, raw.timestamps), args.out)
    report = f"lambda={sol.lambda_hat!r}\nobjective={sol.objective_value!r}\npair_count={sol.pair_count}\n"
    _write_text(report, args.report)


def cmd_cameras_score(args) -> None:
    a = cg.normalize_to_first(_load_trajectory(args.a))
    b = cg.normalize_to_first(_load_trajectory(args.b))
    _write_text(_csv(["rot_err", "trans_err"], [[cg.rotation_error(a, b), cg.translation_error(a, b)]]), args.out)


# ---------------------------------------------------------------------------
# flow and spectra


def cmd_flow_estimate(args) -> None:
    video = read_tensor(args.video).astype(np.float64)
    if video.ndim == 3:
        video = video[:, None]
    if video.ndim != 4 or video.shape[0] < 2:
        raise ValueError(f"expected a [F, C, H, W] or [F, H, W] stack with F >= 2, got {video.shape}")
    cfg = _flow_config(args)
    flows = [fs.estimate_flow(video[f], video[f + 1], cfg) for f in range(video.shape[0] - 1)]
    write_tensor(np.stack(flows), args.out)


def cmd_spectrum(args) -> None:
    flows = read_tensor(args.flows).astype(np.float64)
    if flows.ndim == 3:
        flows = flows[None]
    vol = fs.spectral_volume(list(flows), args.bins)
    rows = zip(vol.nu, vol.amplitude, vol.power, vol.counts)
    _write_text(_csv(["bin_center", "amplitude", "power", "count"], rows), args.out)


def _parse_timestep_inputs(items) -> dict:
    out: dict = {}
    for item in items:
        t, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--latents expects T=PATH, got {item!r}")
        try:
            key = float(t)
        except ValueError:
            raise UsageError(f"bad timestep {t!r}")
        arr = read_tensor(path).astype(np.float64)
        vids = [arr] if arr.ndim == 4 else list(arr)
        out.setdefault(key, []).extend(vids)
    return out


def cmd_spectrum_timesteps(args) -> None:
    cfg = fs.FlowConfig(
        levels=args.levels, smoothness=args.smoothness, iterations=args.iterations, n_bins=args.bins
    )
    spec = fs.per_timestep_spectra(_parse_timestep_inputs(args.latents), cfg)
    _write_text(_csv(["t", "bin_center", "amplitude", "ratio"], spec.rows()), args.out)


# ---------------------------------------------------------------------------
# probing


def _probe_inputs(args):
    records = probing.load_activations(args.activations)
    ids = sorted({r.video_id for r in records})
    Y = read_tensor(args.targets).astype(np.float64)
    if Y.ndim != 2 or Y.shape[0] != len(ids) or Y.shape[1] % 6:
        raise ValueError(f"targets must be [{len(ids)} videos, 6*F] in sorted video-id order, got {Y.shape}")
    targets = dict(zip(ids, Y))
    return records, targets, probing.default_split(ids, args.train_fraction)


def cmd_probe_pca(args) -> None:
    records = probing.load_activations(args.activations)
    train_ids, _ = probing.default_split([r.video_id for r in records], args.train_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    cells = sorted({(r.block_index, r.noise_level) for r in records})
    for b, s in cells:
        cell = [r for r in records if (r.block_index, r.noise_level) == (b, s)]
        basis, reduced = probing.reduce_pca(cell, args.k, train_ids)
        for r in reduced:
            write_tensor(r.features, out / probing.activation_filename(r.block_index, r.noise_level, r.video_id))
        rows += [[b, s, k, v] for k, v in enumerate(basis.variances)]
    _write_text(_csv(["block", "sigma", "component", "variance"], rows), args.report)


def cmd_probe_fit(args) -> None:
    records, targets, (train_ids, test_ids) = _probe_inputs(args)
    level = args.sigma
    cell = [r for r in records if r.block_index == args.block and abs(r.noise_level - level) < 1e-9]
    if not cell:
        raise ValueError(f"no activations for block {args.block}, sigma {level}")
    rot, trans = probing.probe_cell(cell, targets, args.k, args.alpha, train_ids, test_ids)
    _write_text(_csv(["block", "sigma", "rot_err", "trans_err"], [[args.block, level, rot, trans]]), args.out)


def cmd_probe_sweep(args) -> None:
    records, targets, split = _probe_inputs(args)
    rows = probing.sweep(records, targets, args.k, args.alpha, split)
    _write_text(probing.sweep_csv(rows), args.out)


# ---------------------------------------------------------------------------
# synthetic data


def _parse_mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        name, sep, val = part.partition("=")
        if not sep:
            raise UsageError(f"--mix expects MODE=P[,MODE=P...], got {text!r}")
        try:
            mix[name.strip()] = float(val)
        except ValueError:
            raise UsageError(f"bad proportion {val!r}")
    return mix


def cmd_synth_gen(args) -> None:
    params = synth.ClipParams(n_frames=args.frames, height=args.height, width=args.width)
    synth.make_dataset(args.n, _parse_mix(args.mix), stage_seed(args.seed, "synth-gen"), args.out, params)


# ---------------------------------------------------------------------------
# diffusion


def _overrides(items) -> dict:
    out: dict = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not (sep and dot):
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out.setdefault(section, {})[name] = value
    return out


def cmd_train(args) -> None:
    torch = _torch()
    from .diffusion import checkpoint, config, data, training

    config.register_section("train", training.TrainConfig)
    sched = config.NoiseSchedule.base() if args.phase == 1 else config.NoiseSchedule.camera()
    sections = {"model": config.ModelConfig(), "train": training.TrainConfig(phase=args.phase), "schedule": sched}
    if args.config is not None:
        sections = config.load_config(args.config, sections)
    for section, items in _overrides(args.set).items():
        if section not in ("model", "train", "schedule"):
            raise UsageError(f"unknown --set section {section!r}")
        try:
            sections[section] = config.apply_overrides(sections[section], items)
        except config.ConfigError as exc:
            raise UsageError(str(exc))
    tcfg = sections["train"]
    tcfg = type(tcfg)(**{**tcfg.__dict__, "phase": args.phase, "seed": stage_seed(args.seed, f"train-{args.phase}")})
    if args.init is not None:
        model = checkpoint.load_checkpoint(args.init)
    else:
        torch.manual_seed(stage_seed(args.seed, "init"))
        model = checkpoint.VDiT(sections["model"])
    ds = data.from_directory(args.data)
    result = training.train(model, ds, tcfg, sections["schedule"])
    checkpoint.save_checkpoint(model, args.out)
    _write_text(result.csv(), args.log)


def cmd_sample(args) -> None:
    torch = _torch()
    from .diffusion import checkpoint, sampling
    from .diffusion.config import GuidanceWeights
    from .diffusion.data import plucker_tensor

    model = checkpoint.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    B, F_, H, W = args.n, args.frames, args.height, args.width
    plucker = None
    if args.trajectory is not None:
        traj = _load_trajectory(args.trajectory)
        if len(traj) != F_:
            raise ValueError(f"trajectory has {len(traj)} frames, --frames is {F_}")
        plucker = plucker_tensor(traj, H, W)[None].expand(B, -1, -1, -1, -1)
    text = None
    if args.caption is not None:
        text = torch.from_numpy(synth.tokenize(args.caption, cfg.text_len))[None].expand(B, -1)
    gen = torch.Generator().manual_seed(stage_seed(args.seed, "sample"))
    res = sampling.sample(
        model,
        (B, F_, cfg.channels, H, W),
        text,
        plucker,
        steps=args.steps,
        guidance=GuidanceWeights(args.w_y, args.w_c),
        gate=(args.gate_lo, args.gate_hi),
        generator=gen,
        save_denoised=args.denoised is not None,
    )
    write_tensor(res.video.numpy(), args.out)
    if args.denoised is not None:
        d = Path(args.denoised)
        d.mkdir(parents=True, exist_ok=True)
        for t, x in sorted(res.denoised.items()):
            write_tensor(x.numpy(), d / f"t{t:.4f}.tnsr")


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_flow_flags(p) -> None:
    p.add_argument("--levels", type=int, default=4, help="pyramid levels (default 4)")
    p.add_argument("--smoothness", type=float, default=15.0, help="quadratic smoothness weight (default 15)")
    p.add_argument("--iterations", type=int, default=30, help="solver iterations per level (default 30)")
    p.add_argument("--bins", type=int, default=32, help="radial frequency bins (default 32)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"global seed (default {DEFAULT_SEED})")

    parser = _Parser(prog="camctrl", description="Camera-control toolkit for video diffusion.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    parser.set_defaults(subparsers=sub.choices)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("cameras-parse", cmd_cameras_parse, "Validate a trajectory file and print per-frame Euler targets as CSV.")
    p.add_argument("trajectory", help="trajectory text file")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--targets", help="also write flattened [1, 6F] targets as TNSR")

    p = add("cameras-plucker", cmd_cameras_plucker, "Write the [F, H, W, 6] Plucker volume of a trajectory.")
    p.add_argument("trajectory", help="trajectory text file")
    p.add_argument("--height", type=int, required=True, help="image height in pixels")
    p.add_argument("--width", type=int, required=True, help="image width in pixels")
    p.add_argument("--normalize", action="store_true", help="express poses relative to the first frame")
    p.add_argument("--out", required=True, help="output TNSR path")

    p = add("cameras-rescale", cmd_cameras_rescale, "Fit a metric scale from sparse points and metric depths.")
    p.add_argument("trajectory", help="trajectory text file in reconstruction units")
    p.add_argument("--points", required=True, help="TNSR [N, 3] reconstruction points")
    p.add_argument("--depths", required=True, help="TNSR [F, H, W] metric depths")
    p.add_argument("--per-frame", action="store_true", help="average residuals within frames first")
    p.add_argument("--out", required=True, help="rescaled trajectory output path")
    p.add_argument("--report", help="key=value report path (default stdout)")

    p = add("cameras-score", cmd_cameras_score, "Rotation and translation error between two trajectories.")
    p.add_argument("a", help="first trajectory file")
    p.add_argument("b", help="second trajectory file")
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = add("flow-estimate", cmd_flow_estimate, "Optical flow between consecutive frames of a TNSR video.")
    p.add_argument("video", help="TNSR [F, C, H, W] or [F, H, W]")
    p.add_argument("--out", required=True, help="TNSR [F-1, H, W, 2] output")
    _add_flow_flags(p)

    p = add("spectrum", cmd_spectrum, "Radially binned amplitude spectrum of flow fields as CSV.")
    p.add_argument("flows", help="TNSR [N, H, W, 2] or [H, W, 2]")
    p.add_argument("--bins", type=int, default=32, help="radial frequency bins (default 32)")
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = add("spectrum-timesteps", cmd_spectrum_timesteps, "Per-timestep spectra of denoised latents and ratios to t=0.")
    p.add_argument("--latents", action="append", required=True, metavar="T=PATH",
                   help="TNSR [F, C, H, W] or [N, F, C, H, W] at noise level T (repeatable; T=0 required)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    _add_flow_flags(p)

    def probe_common(p):
        p.add_argument("activations", help="directory of act_b{block}_s{k}_{video}.tnsr files (sigma = k/8)")
        p.add_argument("--train-fraction", type=float, default=0.9, help="leading share of sorted video ids used for training")

    p = add("probe-pca", cmd_probe_pca, "Fit per-cell channel PCA on training videos and write reduced activations.")
    probe_common(p)
    p.add_argument("--k", type=int, default=16, help="components kept (default 16)")
    p.add_argument("--out", required=True, help="output directory for reduced activations")
    p.add_argument("--report", help="CSV of captured variances (default stdout)")

    for name, fn, text in (
        ("probe-fit", cmd_probe_fit, "Fit and score one ridge probe for a (block, sigma) cell."),
        ("probe-sweep", cmd_probe_sweep, "Fit and score ridge probes for every (block, sigma) cell."),
    ):
        p = add(name, fn, text)
        probe_common(p)
        p.add_argument("--targets", required=True, help="TNSR [N, 6F] Euler targets, rows in sorted video-id order")
        p.add_argument("--k", type=int, default=16, help="PCA components (default 16)")
        p.add_argument("--alpha", type=float, default=probing.DEFAULT_ALPHA, help="ridge weight (default 25000)")
        if name == "probe-fit":
            p.add_argument("--block", type=int, required=True, help="1-based block index")
            p.add_argument("--sigma", type=float, required=True, help="noise level k/8")
        p.add_argument("--out", help="CSV output path (default stdout)")

    p = add("synth-gen", cmd_synth_gen, "Render a synthetic dataset with ground-truth cameras and flow.")
    p.add_argument("--n", type=int, required=True, help="number of clips")
    p.add_argument("--mix", default="camera=0.75,static=0.25", help="MODE=P list over camera, scene, both, static")
    p.add_argument("--frames", type=int, default=17, help="frames per clip (default 17)")
    p.add_argument("--height", type=int, default=32, help="frame height (default 32)")
    p.add_argument("--width", type=int, default=32, help="frame width (default 32)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "Train the toy model: phase 1 backbone, phase 2 camera branch.")
    p.add_argument("--data", required=True, help="dataset directory from synth-gen")
    p.add_argument("--phase", type=int, choices=(1, 2), required=True, help="1 = backbone, 2 = camera branch")
    p.add_argument("--init", help="checkpoint directory to start from")
    p.add_argument("--config", help="key=value config file (model.*, train.* and schedule.* keys)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--log", help="loss CSV path (default stdout)")

    p = add("sample", cmd_sample, "Sample videos from a checkpoint, optionally camera-conditioned.")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--trajectory", help="trajectory file for camera conditioning")
    p.add_argument("--caption", help="caption over the synth vocabulary")
    p.add_argument("--n", type=int, default=1, help="number of samples (default 1)")
    p.add_argument("--frames", type=int, default=17, help="frames (default 17)")
    p.add_argument("--height", type=int, default=32, help="height (default 32)")
    p.add_argument("--width", type=int, default=32, help="width (default 32)")
    p.add_argument("--steps", type=int, default=40, help="Euler steps (default 40)")
    p.add_argument("--w-y", type=float, default=0.0, help="text guidance weight (default 0)")
    p.add_argument("--w-c", type=float, default=0.0, help="camera guidance weight (default 0)")
    p.add_argument("--gate-lo", type=float, default=0.6, help="camera gate lower bound (default 0.6)")
    p.add_argument("--gate-hi", type=float, default=1.0, help="camera gate upper bound (default 1.0)")
    p.add_argument("--out", required=True, help="TNSR [N, F, C, H, W] output")
    p.add_argument("--denoised", help="directory for per-step clean predictions t<value>.tnsr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra:
        args.subparsers[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        _threads()
        args.func(args)
    except UsageError as exc:
        print(f"camctrl {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"camctrl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
