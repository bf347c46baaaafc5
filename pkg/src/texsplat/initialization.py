"""Seeded scene initialization for image-fitting runs."""

from __future__ import annotations

import math

import numpy as np

from .geometry import Camera, inverse_sigmoid
from .renderer import Scene
from .texture import NEUTRAL_ALPHA_LOGIT, TexelGrid


def planar_camera(width: int, height: int) -> Camera:
    """Identity planar camera whose world units are pixels."""
    return Camera(world_to_camera=np.eye(4), focal=(1.0, 1.0), principal=(0.0, 0.0),
                  resolution=(width, height), mode="planar")


def _sample_colors(target: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = target.shape[:2]
    ix = np.clip(xs.astype(np.int64), 0, w - 1)
    iy = np.clip(ys.astype(np.int64), 0, h - 1)
    # stay strictly inside (0, 1) so the color clamp starts inactive
    return np.clip(target[iy, ix], 0.05, 0.95)


def init_planar_scene(target: np.ndarray, n_splats: int, rng: np.random.Generator,
                      texture_dims: tuple[int, int] | None = None,
                      channels: int = 3, opacity: float = 0.7) -> Scene:
    """Jittered-grid splats over the image, colors sampled from the target.

    Splats sit near z = 1 with small depth jitter (orthographic rendering
    ignores depth except for blend order), isotropic scales of ~0.65 grid
    spacings, and small random in-plane rotations.  texture_dims attaches
    a fixed-size zero texture to every splat.
    """
    h, w = target.shape[:2]
    cols = max(1, round(math.sqrt(n_splats * w / h)))
    rows = max(1, math.ceil(n_splats / cols))
    spacing_x = w / cols
    spacing_y = h / rows
    spacing = 0.5 * (spacing_x + spacing_y)

    cells = [(c, r) for r in range(rows) for c in range(cols)][:n_splats]
    cx = np.array([c for c, _ in cells], dtype=np.float64)
    cy = np.array([r for _, r in cells], dtype=np.float64)
    xs = (cx + 0.5) * spacing_x + rng.uniform(-0.3, 0.3, len(cells)) * spacing_x
    ys = (cy + 0.5) * spacing_y + rng.uniform(-0.3, 0.3, len(cells)) * spacing_y
    zs = 1.0 + rng.uniform(-0.25, 0.25, len(cells))

    theta = rng.uniform(-math.pi, math.pi, len(cells))
    quats = np.zeros((len(cells), 4))
    quats[:, 0] = np.cos(theta / 2)
    quats[:, 3] = np.sin(theta / 2)

    log_scales = np.full((len(cells), 2), math.log(0.65 * spacing))
    log_scales += rng.uniform(-0.15, 0.15, (len(cells), 2))

    scene = Scene(
        means=np.stack([xs, ys, zs], axis=1),
        rotations=quats,
        log_scales=log_scales,
        opacity_logits=np.full(len(cells), inverse_sigmoid(opacity)),
        base_colors=_sample_colors(target, xs, ys),
    )
    if texture_dims is not None:
        tu, tv = int(texture_dims[0]), int(texture_dims[1])
        for k in range(scene.n_splats):
            texels = np.zeros((tu, tv, channels))
            if channels == 4:
                texels[:, :, 3] = NEUTRAL_ALPHA_LOGIT
            scene.textures[k] = TexelGrid(texels)
    return scene
