"""Command-line surface: fit, render, eval, check-grad, verify-warp, make-toy.

Exit codes: 0 success, 1 validation or tolerance failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .gradients import finite_difference_check, quadratic_image_loss
from .renderer import render, worker_count
from .sceneio import (SceneDocument, load_checkpoint, load_dataset, load_image,
                      load_scene, save_checkpoint, save_image, write_growth_csv,
                      write_metrics_csv)
from .texture import WarpMode, verify_warp_density
from .training import TrainConfig, evaluate, train


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texsplat",
                                description="Textured 2D Gaussian splatting trainer")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a scene against its target images")
    fit.add_argument("--scene", required=True)
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--workers", type=int, default=None,
                     help="override ASAP_THREADS worker count")

    ren = sub.add_parser("render", help="inference render of a checkpoint view")
    ren.add_argument("--checkpoint", required=True)
    ren.add_argument("--view", type=int, default=0)
    ren.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="PSNR/SSIM per view plus parameter accounting")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--scene", required=True)

    cg = sub.add_parser("check-grad", help="finite-difference gradient check")
    cg.add_argument("--scene", required=True)
    cg.add_argument("--mode", choices=["axis", "radial", "none"], default=None)
    cg.add_argument("--step", type=float, default=1e-5)

    vw = sub.add_parser("verify-warp", help="KS uniformity check of a warp")
    vw.add_argument("--mode", choices=["axis", "radial"], required=True)
    vw.add_argument("--n", type=int, default=100_000)
    vw.add_argument("--seed", type=int, default=0)

    mt = sub.add_parser("make-toy", help="generate a synthetic target + scene")
    mt.add_argument("--kind", choices=["split-frequency", "gradient", "photo"],
                    required=True)
    mt.add_argument("--out", required=True)
    mt.add_argument("--size", type=int, default=96)
    mt.add_argument("--splats", type=int, default=200)
    mt.add_argument("--seed", type=int, default=0)
    mt.add_argument("--texture-dims", default=None,
                    help="attach fixed textures, e.g. 4x4")
    mt.add_argument("--channels", choices=["rgb", "rgba"], default="rgb")
    return p


def _cmd_fit(args) -> int:
    doc = load_scene(args.scene)
    with open(args.config) as f:
        config = TrainConfig.from_dict(json.load(f))
    dataset = load_dataset(doc, os.path.dirname(os.path.abspath(args.scene)))
    if not dataset:
        print("scene has no cameras with target images", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)

    def on_eval(step, scene):
        img = render(scene, doc.cameras[0], config.mode, keep_tape=False,
                     n_workers=args.workers).image
        save_image(os.path.join(args.out, f"eval_{step:06d}.png"), img)

    result = train(doc.scene, dataset, config, n_workers=args.workers,
                   eval_callback=on_eval)
    trained = SceneDocument(result.scene, doc.cameras, doc.target_paths, config.mode)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), trained,
                    result.adam, result.ledger,
                    meta={"seed": config.seed, "steps": config.total_steps,
                          "workers": worker_count(args.workers)})
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.metrics)
    write_growth_csv(os.path.join(args.out, "growth_events.csv"), result.growth_events)
    final = result.metrics[-1]
    print(f"finished {config.total_steps} steps: loss={final['loss']:.6g} "
          f"psnr={final['psnr']:.3f} texels={final['texel_count']}")
    return 0


def _cmd_render(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    doc = ck.document
    if not 0 <= args.view < len(doc.cameras):
        print(f"view {args.view} out of range", file=sys.stderr)
        return 1
    out = render(doc.scene, doc.cameras[args.view], doc.warp_mode, keep_tape=False)
    save_image(args.out, out.image)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    scene_doc = load_scene(args.scene)
    dataset = load_dataset(scene_doc, os.path.dirname(os.path.abspath(args.scene)))
    if not dataset:
        print("scene has no target images to evaluate against", file=sys.stderr)
        return 1
    from .losses import psnr as psnr_fn, ssim as ssim_fn

    scene = ck.document.scene
    mode = ck.document.warp_mode
    for i, (cam, target) in enumerate(dataset):
        img = render(scene, cam, mode, keep_tape=False).image
        print(f"view {i}: psnr={psnr_fn(img, target):.4f} ssim={ssim_fn(img, target):.5f}")
    params = scene.parameter_count()
    print(f"splats: {scene.n_splats}")
    print(f"texel scalars: {scene.texel_scalars()} in {scene.active_textures()} textures")
    print(f"parameters: {params}")
    print(f"size_mb: {4 * params / 1e6:.6f}")
    return 0


def _cmd_check_grad(args) -> int:
    doc = load_scene(args.scene)
    mode = WarpMode.parse(args.mode) if args.mode else doc.warp_mode
    cam = doc.cameras[0]
    rng = np.random.default_rng(0)
    target = rng.uniform(0.0, 1.0, (cam.resolution[1], cam.resolution[0], 3))
    report = finite_difference_check(doc.scene, cam, mode,
                                     quadratic_image_loss(target), h=args.step)
    print(f"max relative error: {report.max_rel_error:.6e} "
          f"(checked {report.n_checked}, skipped {report.n_skipped} non-smooth, "
          f"{report.n_below_floor} below gradient floor; worst {report.worst_param})")
    return 0 if report.max_rel_error < 1e-4 else 1


def _cmd_verify_warp(args) -> int:
    ks = verify_warp_density(WarpMode.parse(args.mode), args.n, args.seed)
    print(f"KS statistic ({args.mode}, n={args.n}, seed={args.seed}): {ks:.6f}")
    return 0 if ks < 0.01 else 1


def _cmd_make_toy(args) -> int:
    from .toys import make_toy

    dims = None
    if args.texture_dims:
        parts = args.texture_dims.lower().split("x")
        if len(parts) != 2:
            print("--texture-dims expects TUxTV, e.g. 4x4", file=sys.stderr)
            return 1
        dims = (int(parts[0]), int(parts[1]))
    paths = make_toy(args.kind, args.out, size=args.size, n_splats=args.splats,
                     seed=args.seed, texture_dims=dims, channels=args.channels)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "check-grad": _cmd_check_grad,
    "verify-warp": _cmd_verify_warp,
    "make-toy": _cmd_make_toy,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
