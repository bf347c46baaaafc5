"""Shared builders and the brute-force reference renderer.

reference_render composes the scalar operations (ray_transform, intersect,
effective_alpha/effective_color, explicit front-to-back loop) pixel by
pixel.  It shares no code with the vectorized renderer's fast path and
serves as its oracle.
"""

import numpy as np
import pytest

from texsplat.geometry import (Camera, NoIntersection, SingularTransform,
                               SplatGeometry, build_homogeneous_transform,
                               intersect, inverse_sigmoid, ray_transform)
from texsplat.renderer import EPS_T, Scene, effective_alpha, effective_color
from texsplat.texture import NEUTRAL_ALPHA_LOGIT, TexelGrid


def perspective_camera(size=16, focal=20.0):
    return Camera(world_to_camera=np.eye(4), focal=(focal, focal),
                  principal=(size / 2, size / 2), resolution=(size, size),
                  mode="perspective")


def planar_camera(size=16):
    return Camera(world_to_camera=np.eye(4), focal=(1.0, 1.0),
                  principal=(0.0, 0.0), resolution=(size, size), mode="planar")


def fronto_splat(x, y, z, sigma=2.0, opacity=0.6, color=(1.0, 0.0, 0.0)):
    """Axis-aligned splat facing a planar/identity camera."""
    return SplatGeometry(mean=[x, y, z], rotation=[1.0, 0.0, 0.0, 0.0],
                         log_scale=np.log([sigma, sigma]),
                         opacity_logit=inverse_sigmoid(opacity),
                         base_color=color)


def random_texture(rng, channels=3, dims=None):
    if dims is None:
        dims = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    tex = rng.uniform(-0.25, 0.25, dims + (channels,))
    if channels == 4:
        tex[:, :, 3] = rng.uniform(-1.5, 1.5, dims)
    return TexelGrid(tex)


def random_scene(rng, n=5, channels=3, textured="some", planar=False):
    """Random well-conditioned scene in front of the default cameras."""
    splats = []
    textures = []
    for i in range(n):
        if planar:
            mean = np.array([rng.uniform(3, 13), rng.uniform(3, 13),
                             rng.uniform(0.5, 2.5)])
            log_scale = rng.uniform(0.3, 1.2, 2)
        else:
            mean = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                             rng.uniform(2.0, 4.0)])
            log_scale = rng.uniform(-1.6, -0.6, 2)
        splats.append(SplatGeometry(
            mean=mean,
            rotation=rng.standard_normal(4),
            log_scale=log_scale,
            opacity_logit=rng.uniform(-1.0, 1.5),
            base_color=rng.uniform(0.15, 0.85, 3)))
        attach = textured == "all" or (textured == "some" and i % 2 == 0)
        textures.append(random_texture(rng, channels) if attach else None)
    return Scene.from_splats(splats, textures)


def neutral_texture(dims, channels):
    """Zero RGB offsets, neutral alpha: renders exactly like no texture."""
    tex = np.zeros(dims + (channels,))
    if channels == 4:
        tex[:, :, 3] = NEUTRAL_ALPHA_LOGIT
    return TexelGrid(tex)


def reference_render(scene, camera, mode, background=(0.0, 0.0, 0.0)):
    """Per-pixel render via the scalar spec operations (the oracle)."""
    width, height = camera.resolution
    bg = np.asarray(background, dtype=np.float64)
    img = np.zeros((height, width, 3))
    tfin = np.ones((height, width))
    mats = []
    for k in range(scene.n_splats):
        try:
            mats.append(ray_transform(build_homogeneous_transform(scene.splat(k)),
                                      camera.world_to_camera))
        except SingularTransform:
            mats.append(None)
    ortho = camera.mode == "planar"
    for iy in range(height):
        for ix in range(width):
            rx = (ix + 0.5 - camera.principal[0]) / camera.focal[0]
            ry = (iy + 0.5 - camera.principal[1]) / camera.focal[1]
            contribs = []
            for k in range(scene.n_splats):
                if mats[k] is None:
                    continue
                try:
                    cp = intersect(mats[k], (rx, ry), orthographic=ortho)
                except NoIntersection:
                    continue
                if cp.uv @ cp.uv > 9.0:
                    continue
                g = scene.splat(k)
                contribs.append((cp.depth, k,
                                 effective_alpha(g, scene.textures[k], cp, mode),
                                 effective_color(g, scene.textures[k], cp, mode)))
            contribs.sort(key=lambda item: (item[0], item[1]))
            T = 1.0
            for _, _, a, c in contribs:
                if T < EPS_T:
                    break
                img[iy, ix] += T * a * c
                T *= 1.0 - a
            tfin[iy, ix] = T
            img[iy, ix] += T * bg
    return img, tfin


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
