"""Command-line interface: train / render / eval / synth / bench."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from ._backend import active_backend
from .deform import BasisKind
from .errors import InvalidParameterError
from .metrics import bench_render, evaluate_dataset
from .rasterizer import render
from .synthetic import SynthSpec, generate_synthetic
from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynasplat",
                                     description="CPU Gaussian splatting for deforming RGB-D scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="optimize a scene reconstruction")
    p_train.add_argument("--data", required=True, help="scene directory")
    p_train.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p_train.add_argument("--iters", type=int, default=3000)
    p_train.add_argument("--lr", type=float, default=1.6e-3)
    p_train.add_argument("--bases", type=int, default=17)
    p_train.add_argument("--tau", type=float, default=0.1)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-mapf", action="store_true",
                         help="initialize from frame 0 only (skip motion-aware point fusion)")
    p_train.add_argument("--basis", choices=["gaussian", "fourier-poly"], default="gaussian")
    p_train.add_argument("--sh-degree", type=int, default=0, choices=[0, 1, 2, 3])

    p_render = sub.add_parser("render", help="render a trained checkpoint")
    p_render.add_argument("--ckpt", required=True)
    p_render.add_argument("--data", required=True, help="scene directory providing cameras")
    group = p_render.add_mutually_exclusive_group(required=True)
    group.add_argument("--time", type=float, help="normalized timestamp in [0, 1]")
    group.add_argument("--frame", type=int, help="frame index")
    p_render.add_argument("--out", required=True, help="output prefix for the color/depth pair")

    p_eval = sub.add_parser("eval", help="metrics on the held-out test split")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", help="optional output prefix for report files")

    p_synth = sub.add_parser("synth", help="write a synthetic benchmark scene")
    p_synth.add_argument("--spec", required=True, help="path to a JSON generator spec")
    p_synth.add_argument("--out", required=True, help="scene directory to create")
    p_synth.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="rendering throughput on every kernel backend")
    p_bench.add_argument("--ckpt", required=True)
    p_bench.add_argument("--reps", type=int, default=10)
    p_bench.add_argument("--data", help="scene directory providing cameras (synthetic orbit otherwise)")
    return parser


def _cmd_train(args) -> int:
    dataset = dataio.load_dataset(args.data)
    cfg = TrainConfig(iterations=args.iters, lr=args.lr, n_bases=args.bases, tau=args.tau,
                      seed=args.seed, use_point_fusion=not args.no_mapf,
                      basis=BasisKind(args.basis), sh_degree=args.sh_degree)
    # short runs simply never densify
    cfg.densify_freeze_iters = min(cfg.densify_freeze_iters, args.iters)
    result = train(dataset, cfg, out_dir=args.out)
    final = result.history[-1] if result.history else (0, 0.0, 0.0, 0.0, len(result.cloud))
    print(f"trained {final[4]} gaussians for {final[0]} iterations "
          f"in {result.train_time_sec:.1f}s (final loss {final[3]:.5f})")
    print(f"checkpoint: {os.path.join(args.out, 'ckpt_final.dgs')}")
    return 0


def _cmd_render(args) -> int:
    ckpt = dataio.load_checkpoint(args.ckpt)
    dataset = dataio.load_dataset(args.data)
    if args.frame is not None:
        if not 0 <= args.frame < len(dataset):
            raise InvalidParameterError(f"frame {args.frame} out of range (dataset has {len(dataset)})")
        cam = dataset.cams[args.frame]
    else:
        cam = min(dataset.cams, key=lambda c: abs(c.t - args.time))
        cam = type(cam)(K=cam.K, T=cam.T, t=float(args.time), width=cam.width, height=cam.height)
    out = render(ckpt.cloud, cam)
    dataio.write_ppm(args.out + "_color.ppm", out.color)
    dmax = max(float(out.depth.max()), 1e-6)
    scale = dmax / 65000.0
    dataio.write_pgm16(args.out + "_depth.pgm", out.depth / scale)
    with open(args.out + "_depth_scale.txt", "w") as fh:
        fh.write(f"{scale!r}\n")
    print(f"wrote {args.out}_color.ppm and {args.out}_depth.pgm (depth_scale {scale:.3e})")
    return 0


def _cmd_eval(args) -> int:
    ckpt = dataio.load_checkpoint(args.ckpt)
    dataset = dataio.load_dataset(args.data)
    report = evaluate_dataset(ckpt.cloud, dataset, split="test")
    bench = bench_render(ckpt.cloud, [dataset.cams[i] for i in dataset.test_indices], repetitions=3)
    report.fps = bench.fps
    report.fps_std = bench.fps_std
    report.train_time_sec = float(dataio.read_train_meta(args.ckpt).get("train_time_sec", 0.0))
    print(f"test frames: {report.frame_indices}")
    print(f"psnr_mean {report.psnr_mean:.3f} dB")
    print(f"ssim_mean {report.ssim_mean:.4f}")
    print(f"fps {report.fps:.1f} +- {report.fps_std:.1f} ({bench.backend} backend)")
    if args.out:
        dataio.write_metric_report(report, args.out)
        print(f"wrote {args.out}_summary.txt and {args.out}_frames.csv")
    return 0


def _cmd_synth(args) -> int:
    with open(args.spec) as fh:
        spec = SynthSpec.from_dict(json.load(fh))
    _, frames, cams = generate_synthetic(spec, args.seed)
    dataio.write_scene(args.out, frames, cams)
    print(f"wrote {spec.n_frames} frames at {spec.width}x{spec.height} to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    ckpt = dataio.load_checkpoint(args.ckpt)
    if args.data:
        dataset = dataio.load_dataset(args.data)
        cams = dataset.cams
    else:
        cams = _orbit_cameras(ckpt.cloud)
    result = bench_render(ckpt.cloud, cams, repetitions=args.reps)
    print(f"active backend: {active_backend()}")
    for name, (fps, std) in result.per_backend.items():
        print(f"{name:9s} {fps:10.2f} fps  (+- {std:.2f}, {args.reps} reps of {len(cams)} frames)")
    return 0


def _orbit_cameras(cloud, n_cams: int = 8, width: int = 64, height: int = 64):
    """Cameras on a ring looking at the cloud centroid, for data-free benches."""
    from .camera import make_camera

    center = cloud.positions.mean(axis=0) if len(cloud) else np.zeros(3)
    radius = 3.0
    if len(cloud):
        radius = max(2.0 * np.linalg.norm(cloud.positions - center, axis=1).max(), 1e-3)
    cams = []
    for i in range(n_cams):
        ang = 2 * np.pi * i / n_cams
        eye = center + radius * np.array([np.sin(ang), 0.0, -np.cos(ang)])
        fwd = center - eye
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])  # world-to-camera rows
        T = np.eye(4)
        T[:3, :3] = rot
        T[:3, 3] = -rot @ eye
        cams.append(make_camera(1.2 * width, 1.2 * width, (width - 1) / 2, (height - 1) / 2,
                                width, height, T=T, t=i / max(n_cams - 1, 1)))
    return cams


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "render": _cmd_render,
        "eval": _cmd_eval,
        "synth": _cmd_synth,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
