"""Hand-derived reverse-mode gradients of the rendering pipeline.

The backward pass replays the contribution tape front to back, turning a
per-pixel image gradient into gradients for every optimizable quantity:
means, rotations, scales, opacity logits, base colors and texels.  The
chain runs image -> blending -> (alpha, color) -> texture sampling and
warp Jacobians -> ray-plane intersection -> parameter encodings.

All cross-pixel reductions use index-ordered bincount scatters, so
results are deterministic and independent of the render worker count.

A central-difference oracle (finite_difference_check) validates the whole
chain; it masks parameters whose perturbation crosses one of the
pipeline's piecewise boundaries (cutoff, clamps, alpha cap, bilinear
cells, blend-order or early-stop changes), where a two-sided difference
is meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, quat_rotation_jacobian, quats_to_rotations, sigmoid
from .renderer import EPS_VIS, RenderOutput, Scene, TexelTable, render
from .texture import WarpMode


class StaleTape(RuntimeError):
    """Tape was recorded for a different scene state."""


class NonFiniteGradient(RuntimeError):
    """A NaN/Inf appeared in the gradients of a named splat."""


@dataclass
class GradientSet:
    """Per-splat gradients mirroring the scene's parameter arrays."""

    d_means: np.ndarray           # (N, 3)
    d_rotations: np.ndarray       # (N, 4)
    d_log_scales: np.ndarray      # (N, 2)
    d_opacity_logits: np.ndarray  # (N,)
    d_base_colors: np.ndarray     # (N, 3)
    d_texels: list                # list[ndarray (T_u, T_v, C) | None]
    visible: np.ndarray           # (N,) bool; blend weight > EPS_VIS somewhere
    base_attr_norm: np.ndarray    # (N,) L1 of (base color, opacity) gradients


def backward(scene: Scene, camera: Camera, mode: WarpMode, out: RenderOutput,
             dL_dimage: np.ndarray) -> GradientSet:
    """Exact gradients of sum(dL_dimage * image) w.r.t. all parameters.

    Requires a tape produced by render(..., keep_tape=True) on the
    identical scene state.
    """
    from ._kernels import backward_pass
    from .renderer import _MODE_CODE

    mode = WarpMode.parse(mode)
    tape = out.tape
    if tape is None:
        raise ValueError("backward needs a render output with keep_tape=True")
    if tape.scene_version != scene.version:
        raise StaleTape(
            f"tape version {tape.scene_version} != scene version {scene.version}")

    height, width = tape.shape
    npix = height * width
    dL = np.ascontiguousarray(np.asarray(dL_dimage, dtype=np.float64).reshape(npix, 3))

    n = scene.n_splats
    grads = GradientSet(
        d_means=np.zeros((n, 3)),
        d_rotations=np.zeros((n, 4)),
        d_log_scales=np.zeros((n, 2)),
        d_opacity_logits=np.zeros(n),
        d_base_colors=np.zeros((n, 3)),
        d_texels=[None if t is None else np.zeros_like(t.texels)
                  for t in scene.textures],
        visible=np.zeros(n, dtype=bool),
        base_attr_norm=np.zeros(n),
    )

    pix = tape.pixel
    sid = tape.splat
    if pix.size == 0:
        return grads

    grads.visible[sid[tape.alpha * tape.t_before > EPS_VIS]] = True

    Rw = camera.rotation
    frames = np.einsum("ij,njk->nik", Rw, quats_to_rotations(scene.rotations))
    mu_c = scene.means @ Rw.T + camera.translation
    s = np.exp(scene.log_scales)
    o_all = sigmoid(scene.opacity_logits)
    table = TexelTable.from_scene(scene)

    acc_mu = np.zeros((n, 3))
    acc_u = np.zeros((n, 3))
    acc_v = np.zeros((n, 3))
    acc_n = np.zeros((n, 3))
    flat_grad = np.zeros(table.total)

    backward_pass(pix, sid, tape.u, tape.v, tape.z, tape.alpha, tape.t_before,
                  tape.gaussian, tape.atex, tape.tc[:, 0].copy(), tape.tc[:, 1].copy(),
                  np.ascontiguousarray(tape.color),
                  np.ascontiguousarray(tape.color_unclamped), tape.capped,
                  dL, out.final_transmittance.reshape(npix), tape.background,
                  frames, mu_c, s, o_all,
                  table.has_tex, table.offsets, table.tu, table.tv,
                  table.channels, table.flat,
                  width, camera.focal[0], camera.focal[1],
                  camera.principal[0], camera.principal[1],
                  camera.mode == "planar", _MODE_CODE[mode],
                  grads.d_base_colors, grads.d_opacity_logits,
                  grads.d_log_scales, acc_mu, acc_u, acc_v, acc_n, flat_grad)

    for k, t in enumerate(scene.textures):
        if t is not None:
            seg = flat_grad[table.offsets[k]:table.offsets[k] + t.n_scalars]
            grads.d_texels[k] = seg.reshape(t.texels.shape)

    grads.d_means[:] = acc_mu @ Rw
    # world-frame axis adjoints -> quaternion through dR/dq
    dLdR = np.stack([acc_u @ Rw, acc_v @ Rw, acc_n @ Rw], axis=2)  # (N, 3, 3)
    Jq = quat_rotation_jacobian(scene.rotations)                    # (N, 3, 3, 4)
    grads.d_rotations[:] = np.einsum("nij,nijk->nk", dLdR, Jq)

    grads.base_attr_norm = (np.abs(grads.d_base_colors).sum(axis=1)
                            + np.abs(grads.d_opacity_logits))

    _check_finite(grads)
    return grads


def _check_finite(grads: GradientSet) -> None:
    per_splat = (np.isfinite(grads.d_means).all(axis=1)
                 & np.isfinite(grads.d_rotations).all(axis=1)
                 & np.isfinite(grads.d_log_scales).all(axis=1)
                 & np.isfinite(grads.d_opacity_logits)
                 & np.isfinite(grads.d_base_colors).all(axis=1))
    for k, t in enumerate(grads.d_texels):
        if t is not None and not np.isfinite(t).all():
            per_splat[k] = False
    if not per_splat.all():
        bad = int(np.flatnonzero(~per_splat)[0])
        raise NonFiniteGradient(f"non-finite gradient for splat {bad}")


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

@dataclass
class FDReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    n_below_floor: int
    worst_param: str = ""

    def __float__(self):
        return self.max_rel_error


def _param_slots(scene: Scene, include_texels: bool = True):
    """Every scalar parameter as (label, array-name, flat index, splat)."""
    slots = []
    for k in range(scene.n_splats):
        for j in range(3):
            slots.append((f"mean[{k},{j}]", "means", 3 * k + j, k))
        for j in range(4):
            slots.append((f"rotation[{k},{j}]", "rotations", 4 * k + j, k))
        for j in range(2):
            slots.append((f"log_scale[{k},{j}]", "log_scales", 2 * k + j, k))
        slots.append((f"opacity_logit[{k}]", "opacity_logits", k, k))
        for j in range(3):
            slots.append((f"base_color[{k},{j}]", "base_colors", 3 * k + j, k))
    if include_texels:
        for k, t in enumerate(scene.textures):
            if t is None:
                continue
            for j in range(t.n_scalars):
                slots.append((f"texel[{k},{j}]", "texture", j, k))
    return slots


def _analytic_value(grads: GradientSet, name: str, idx: int, splat: int) -> float:
    if name == "texture":
        return float(grads.d_texels[splat].ravel()[idx])
    return float(getattr(grads, "d_" + name).ravel()[idx])


def _perturbed(scene: Scene, name: str, idx: int, splat: int, delta: float) -> Scene:
    s = scene.copy()
    if name == "texture":
        s.textures[splat].texels.ravel()[idx] += delta
    else:
        getattr(s, name).ravel()[idx] += delta
    s.bump()
    return s


def _render_signature(scene: Scene, out: RenderOutput):
    """Discrete state of a render; any change marks a non-smooth crossing."""
    tape = out.tape
    has_tex = np.array([t is not None for t in scene.textures])
    tus = np.array([t.dims[0] if t is not None else 1 for t in scene.textures])
    tvs = np.array([t.dims[1] if t is not None else 1 for t in scene.textures])
    tu = tus[tape.splat]
    tv = tvs[tape.splat]
    x = tape.tc[:, 0] * tu - 0.5
    y = tape.tc[:, 1] * tv - 0.5
    textured = has_tex[tape.splat]
    cell_x = np.where(textured, np.clip(np.floor(x), -1, tu), 0).astype(np.int64)
    cell_y = np.where(textured, np.clip(np.floor(y), -1, tv), 0).astype(np.int64)
    clamp = ((tape.color_unclamped > 0.0) & (tape.color_unclamped < 1.0)).astype(np.int8)
    return (tape.pixel, tape.splat, tape.capped.astype(np.int8), clamp, cell_x, cell_y)


def _signatures_equal(a, b) -> bool:
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(scene: Scene, camera: Camera, mode: WarpMode,
                            loss_fn, h: float = 1e-5,
                            include_texels: bool = True) -> FDReport:
    """Compare analytic gradients against central differences.

    loss_fn(image) must return (loss, dL_dimage).  Parameters whose +-h
    perturbation changes the discrete render signature (contribution
    set/order, clamp or cap flags, bilinear cells) are skipped, as are
    parameters with |analytic gradient| <= 1e-8.
    """
    mode = WarpMode.parse(mode)
    if not (1e-6 <= h <= 1e-3):
        raise ValueError("step h must be in [1e-6, 1e-3]")

    out = render(scene, camera, mode, keep_tape=True)
    _, dL = loss_fn(out.image)
    grads = backward(scene, camera, mode, out, dL)

    max_err = 0.0
    worst = ""
    n_checked = 0
    n_skipped = 0
    n_floor = 0
    for label, name, idx, splat in _param_slots(scene, include_texels):
        a = _analytic_value(grads, name, idx, splat)
        s_plus = _perturbed(scene, name, idx, splat, +h)
        s_minus = _perturbed(scene, name, idx, splat, -h)
        out_p = render(s_plus, camera, mode, keep_tape=True)
        out_m = render(s_minus, camera, mode, keep_tape=True)
        sig_p = _render_signature(s_plus, out_p)
        sig_m = _render_signature(s_minus, out_m)
        if not _signatures_equal(sig_p, sig_m):
            n_skipped += 1
            continue
        if abs(a) <= 1e-8:
            n_floor += 1
            continue
        lp, _ = loss_fn(out_p.image)
        lm, _ = loss_fn(out_m.image)
        numeric = (lp - lm) / (2.0 * h)
        err = abs(a - numeric) / max(abs(a), abs(numeric))
        n_checked += 1
        if err > max_err:
            max_err = err
            worst = label
    return FDReport(max_rel_error=max_err, n_checked=n_checked,
                    n_skipped=n_skipped, n_below_floor=n_floor, worst_param=worst)


def quadratic_image_loss(target: np.ndarray):
    """Smooth loss 0.5 * sum((image - target)^2) for gradient checking."""
    target = np.asarray(target, dtype=np.float64)

    def loss_fn(image: np.ndarray):
        diff = image - target
        return 0.5 * float(np.sum(diff * diff)), diff

    return loss_fn
