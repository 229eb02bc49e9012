"""Command line front end.

Subcommands cover the whole pipeline: dataset synthesis, controller
training, one-shot identity inversion, animation/interpolation,
throughput benchmarking, and gradient verification.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import checks as checks_mod
from . import engine as eg
from . import imgio, synthetic
from .config import RunConfig, config_summary, default_run_config, load_run_config
from .inversion import animate, interpolate_identity, invert_identity, psnr, train_controller


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse maps usage problems to exit 2; we want 1, so raise instead."""

    def error(self, message):
        raise _UsageError(message)


def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="key=value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config entry (repeatable)")


def _resolve_config(args) -> RunConfig:
    if args.config:
        return load_run_config(args.config, args.set)
    return default_run_config(args.set)


def _ensure_parent(path):
    d = os.path.dirname(os.path.abspath(path))
    if d:
        os.makedirs(d, exist_ok=True)


def _load_latent(path, expect_shape) -> np.ndarray:
    blobs = eg.load_checkpoint(path)
    if "w_plus" not in blobs:
        raise eg.CheckpointError(f"{path}: no 'w_plus' record")
    wp = blobs["w_plus"]
    if wp.shape != expect_shape:
        raise ValueError(f"{path}: latent shape {wp.shape}, model wants {expect_shape}")
    return wp


def _dataset_frame(cfg: RunConfig, clip_idx: int, frame_idx: int):
    """One reference frame: (image, motion window, camera, box, clip dict)."""
    data = synthetic.ClipSet(cfg.data_dir)
    if not 0 <= clip_idx < len(data.clips):
        raise ValueError(f"clip index {clip_idx} out of range (dataset has {len(data.clips)})")
    clip = data.clips[clip_idx]
    n = clip["images"].shape[0]
    if not 0 <= frame_idx < n:
        raise ValueError(f"frame index {frame_idx} out of range (clip has {n})")
    x = synthetic.motion_window(clip["motions"], frame_idx, cfg.window)
    return (clip["images"][frame_idx], x, clip["cameras"][frame_idx],
            tuple(clip["boxes"][frame_idx]), clip)


# -- subcommands ----------------------------------------------------------------


def cmd_make_dataset(args) -> int:
    cfg = _resolve_config(args)
    manifest = synthetic.make_dataset(
        cfg.data_dir, cfg.data_identities, cfg.data_frames, seed=cfg.seed,
        resolution=cfg.data_resolution, train_samples=cfg.data_train_samples,
        holdout_fraction=cfg.data_holdout)
    held = sum(1 for c in manifest["clips"] if c["held_out"])
    print(f"wrote {len(manifest['clips'])} clips x {cfg.data_frames} frames "
          f"({held} held out) under {cfg.data_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data = synthetic.ClipSet(cfg.data_dir)
    system = cfg.build_system()
    train_cfg = cfg.train_config(joint=args.joint, iterations=args.iters)

    _ensure_parent(cfg.log_path)
    _ensure_parent(cfg.checkpoint)
    with open(cfg.log_path, "w") as log_file:
        def emit(rec):
            log_file.write(json.dumps(rec, sort_keys=True, default=float) + "\n")
        result = train_controller(system, data, train_cfg, log=emit)

    ema = result["ema"]
    shadow = {f"ema.{name}": arr
              for (name, _), arr in zip(system.controller.named_params().items(), ema.shadow)}
    system.save(cfg.checkpoint, extra=shadow)
    terms = result["final_terms"]
    loss = terms.get("total", float("nan"))
    mode = "joint" if args.joint else "alternating"
    print(f"trained {result['iterations']} iterations ({mode}), final loss {loss:.4f}")
    print(f"checkpoint -> {cfg.checkpoint}")
    print(f"log -> {cfg.log_path}")
    return 0


def cmd_invert(args) -> int:
    cfg = _resolve_config(args)
    system = cfg.build_system()
    system.load(cfg.checkpoint)
    image, x, cam, box, clip = _dataset_frame(cfg, args.clip, args.frame)

    steps = cfg.invert_steps if args.steps is None else args.steps
    wp = invert_identity(system, image, x, cam, box=box, steps=steps,
                         lr=cfg.lr_latent, seed=cfg.seed)

    os.makedirs(cfg.out_dir, exist_ok=True)
    latent_path = args.latent_out or os.path.join(cfg.out_dir, "latent.ckpt")
    _ensure_parent(latent_path)
    eg.save_checkpoint(latent_path, {"w_plus": wp})

    recon, _ = animate(system, wp, x, cam)
    recon_path = os.path.join(cfg.out_dir, "reconstruction.ppm")
    imgio.write_ppm(recon_path, recon)
    score = psnr(recon, image)
    print(f"inverted {clip['name']} frame {args.frame} in {steps}+{steps} steps")
    print(f"psnr {score:.2f} dB")
    print(f"latent -> {latent_path}")
    print(f"reconstruction -> {recon_path}")
    return 0


def cmd_animate(args) -> int:
    cfg = _resolve_config(args)
    system = cfg.build_system()
    system.load(cfg.checkpoint)
    shape = (cfg.n_layers, cfg.latent_dim)
    wp = _load_latent(args.latent, shape)
    if args.blend is not None:
        other = _load_latent(args.blend, shape)
        wp = interpolate_identity(wp, other, args.alpha)

    motions = synthetic.load_motion_file(args.motion)
    if motions.shape[1] != cfg.expr_dims + cfg.pose_dims:
        raise ValueError(f"motion file has {motions.shape[1]} coefficients per frame, "
                         f"model wants {cfg.expr_dims + cfg.pose_dims}")
    n_frames = motions.shape[0]

    if args.cameras:
        with open(args.cameras) as f:
            lines = [ln for ln in (l.strip() for l in f) if ln]
        res = (cfg.data_resolution, cfg.data_resolution)
        cams = [synthetic.camera_from_line(ln, res) for ln in lines]
        if len(cams) not in (1, n_frames):
            raise ValueError(f"camera file has {len(cams)} entries for {n_frames} motion frames")
        if len(cams) == 1:
            cams = cams * n_frames
    else:
        r = cfg.data_resolution
        front = synthetic.Camera(position=(0.0, 0.0, 2.2), look_at=(0.0, 0.0, 0.0),
                                 fov_y=0.8, resolution=(r, r), near=1.0, far=3.5)
        cams = [front] * n_frames

    os.makedirs(cfg.out_dir, exist_ok=True)
    for t in range(n_frames):
        x = synthetic.motion_window(motions, t, cfg.window)
        img, wx = animate(system, wp, x, cams[t])
        out = os.path.join(cfg.out_dir, f"frame_{t:03d}.ppm")
        imgio.write_ppm(out, img)
        print(f"frame {t:03d} motion_code {eg.checksum([wx]):08x} -> {out}")
    print(f"{n_frames} frames -> {cfg.out_dir}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    system = cfg.build_system()
    if os.path.exists(cfg.checkpoint):
        system.load(cfg.checkpoint)
    cam = synthetic.sample_camera(np.random.default_rng(cfg.seed), cfg.data_resolution)
    x = np.zeros((cfg.expr_dims + cfg.pose_dims, cfg.window))
    report = bench_mod.run_benchmark(system, cam, x, repeats=args.repeats)
    print(bench_mod.format_report(report))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    dtype = np.float64 if args.f64 else np.float32
    results = checks_mod.run_all(dtype=dtype, seed=cfg.seed)
    print(checks_mod.format_results(results))
    return 0 if all(rep.ok for _, rep in results) else 2


def cmd_show_config(args) -> int:
    print(config_summary(_resolve_config(args)))
    return 0


# -- wiring ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="triavatar",
                     description="one-shot avatar pipeline: synthesize data, train, "
                                 "invert, animate, benchmark")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-dataset", help="render a synthetic multi-view dataset")
    _add_common(p)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train controller and volume networks")
    _add_common(p)
    p.add_argument("--iters", type=int, default=None, help="override train.iterations")
    p.add_argument("--joint", action="store_true",
                   help="update latent and controller together (ablation)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("invert", help="recover an identity latent from one frame")
    _add_common(p)
    p.add_argument("--clip", type=int, default=0, help="dataset clip index")
    p.add_argument("--frame", type=int, default=0, help="frame index inside the clip")
    p.add_argument("--steps", type=int, default=None, help="override invert.steps")
    p.add_argument("--latent-out", default=None, help="latent checkpoint path")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("animate", help="drive a latent with a motion file")
    _add_common(p)
    p.add_argument("--latent", required=True, help="latent checkpoint from invert")
    p.add_argument("--motion", required=True, help="text file, one coefficient row per frame")
    p.add_argument("--cameras", default=None,
                   help="camera file (1 shared line or 1 per frame); default front view")
    p.add_argument("--blend", default=None, help="second latent to interpolate with")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="blend weight on --latent (1 keeps it unchanged)")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("bench", help="throughput report plus dense-decoder baseline")
    _add_common(p)
    p.add_argument("--repeats", type=int, default=3, help="timing repetitions, best kept")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    _add_common(p)
    p.add_argument("--f64", action="store_true", help="run in float64 at tolerance 1e-6")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    _add_common(p)
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
