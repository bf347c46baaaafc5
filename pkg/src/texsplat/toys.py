"""Synthetic target images and matching scene/config files for small fits.

Three kinds:
  split-frequency -- left half smooth ramps, right half a high-frequency
                     checkerboard, for growth-targeting experiments;
  gradient        -- smooth full-image color ramps;
  photo           -- a natural-image crop (bundled sample photograph).
"""

from __future__ import annotations

import os

import numpy as np

from .initialization import init_planar_scene, planar_camera
from .sceneio import SceneDocument, save_image, save_scene, _atomic_write_json
from .texture import WarpMode
from .training import TrainConfig

KINDS = ("split-frequency", "gradient", "photo")

# Growth thresholds for desk-scale runs.  The paper-scale defaults in
# TrainConfig target full-dataset gradient magnitudes; at toy image sizes
# the per-texel pressures are orders of magnitude larger, so the emitted
# split-frequency config scales them to the observed desk-scale range.
DESK_TAU_BASE = 2e-5
DESK_TAU_TEX = 6e-7


def target_gradient(size: int) -> np.ndarray:
    xs = np.linspace(0.0, 1.0, size)[None, :]
    ys = np.linspace(0.0, 1.0, size)[:, None]
    img = np.zeros((size, size, 3))
    img[:, :, 0] = 0.15 + 0.7 * xs
    img[:, :, 1] = 0.15 + 0.7 * ys
    img[:, :, 2] = 0.2 + 0.6 * (1.0 - 0.5 * (xs + ys))
    return np.clip(img, 0.0, 1.0)


def target_split_frequency(size: int, checker: int = 4) -> np.ndarray:
    """Left half: smooth ramps.  Right half: a `checker`-pixel checkerboard."""
    img = np.zeros((size, size, 3))
    half = size // 2
    xs = np.linspace(0.0, 1.0, half)[None, :]
    ys = np.linspace(0.0, 1.0, size)[:, None]
    img[:, :half, 0] = 0.25 + 0.45 * ys
    img[:, :half, 1] = 0.35 + 0.3 * xs
    img[:, :half, 2] = 0.6 - 0.35 * ys
    ix = np.arange(size - half)[None, :] // checker
    iy = np.arange(size)[:, None] // checker
    pattern = ((ix + iy) % 2).astype(np.float64)
    dark = np.array([0.08, 0.08, 0.14])
    light = np.array([0.92, 0.88, 0.82])
    img[:, half:] = dark + pattern[:, :, None] * (light - dark)
    return np.clip(img, 0.0, 1.0)


def target_photo(size: int) -> np.ndarray:
    """Center crop of the bundled astronaut photograph, linearized."""
    from skimage import data, transform

    raw = data.astronaut()  # 512x512 uint8 sRGB
    crop = raw[80:80 + 320, 96:96 + 320]
    resized = transform.resize(crop, (size, size), anti_aliasing=True)
    from .sceneio import srgb_to_linear

    return srgb_to_linear(np.clip(resized, 0.0, 1.0))


def make_target(kind: str, size: int) -> np.ndarray:
    if kind == "split-frequency":
        return target_split_frequency(size)
    if kind == "gradient":
        return target_gradient(size)
    if kind == "photo":
        return target_photo(size)
    raise ValueError(f"unknown toy kind {kind!r}; choose from {KINDS}")


def _toy_config(kind: str, size: int, channels: str, fixed_textures: bool,
                seed: int) -> TrainConfig:
    if fixed_textures:
        # pre-attached uniform textures: growth stays off
        return TrainConfig(total_steps=2000, growth_stop_step=0, channels=channels,
                           warp_mode="axis", seed=seed, eval_every=500)
    if kind == "split-frequency":
        return TrainConfig(total_steps=2400, tau_base=DESK_TAU_BASE,
                           tau_tex=DESK_TAU_TEX, n_tex_interval=100,
                           growth_stop_step=None, channels=channels,
                           warp_mode="axis", seed=seed, eval_every=300)
    if kind == "gradient":
        return TrainConfig(total_steps=800, tau_base=DESK_TAU_BASE,
                           tau_tex=DESK_TAU_TEX, channels=channels,
                           warp_mode="axis", seed=seed, eval_every=200)
    return TrainConfig(total_steps=2000, tau_base=DESK_TAU_BASE,
                       tau_tex=DESK_TAU_TEX, channels=channels,
                       warp_mode="axis", seed=seed, eval_every=500)


def make_toy(kind: str, out_dir, size: int = 96, n_splats: int = 200, seed: int = 0,
             texture_dims: tuple[int, int] | None = None,
             channels: str = "rgb") -> dict:
    """Write target.png, scene.json and config.json into out_dir."""
    if kind not in KINDS:
        raise ValueError(f"unknown toy kind {kind!r}; choose from {KINDS}")
    os.makedirs(out_dir, exist_ok=True)
    target = make_target(kind, size)
    target_path = os.path.join(out_dir, "target.png")
    save_image(target_path, target)

    rng = np.random.default_rng(seed)
    n_ch = 4 if channels == "rgba" else 3
    scene = init_planar_scene(target, n_splats, rng,
                              texture_dims=texture_dims, channels=n_ch)
    config = _toy_config(kind, size, channels, texture_dims is not None, seed)

    doc = SceneDocument(scene=scene, cameras=[planar_camera(size, size)],
                        target_paths=["target.png"],
                        warp_mode=WarpMode.parse(config.warp_mode))
    scene_path = os.path.join(out_dir, "scene.json")
    save_scene(scene_path, doc)
    config_path = os.path.join(out_dir, "config.json")
    _atomic_write_json(config_path, config.to_dict())
    return {"target": target_path, "scene": scene_path, "config": config_path}
