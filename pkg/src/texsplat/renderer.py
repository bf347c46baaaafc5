"""Forward synthesis: depth-sorted, front-to-back alpha blending of splats.

Per pixel, every splat whose screen bounding box covers it is intersected,
its textured color and alpha evaluated in canonical space, and the results
composited in ascending intersection depth:

    C(p) = sum_i c_i a_i prod_{j<i} (1 - a_j) + T_final * background.

The pass records a per-pixel contribution tape so the backward pass can
replay blending without storing intermediate transmittances.  The
per-splat loop only does ray-plane geometry; texturing and blending run
flat over the merged contribution arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import R_CUT, Camera, SplatGeometry, CanonicalPoint, gaussian_weight, \
    quats_to_rotations, sigmoid
from .texture import TexelGrid, WarpMode, canonical_to_texcoord, sample_texture

# Transmittance early-stop threshold; also caps per-splat alpha at 1 - EPS_T
# so backward never divides by a vanishing (1 - alpha).
EPS_T = 1e-4
# Blend weight above which a splat counts as visible at a pixel.
EPS_VIS = 1e-4

_ZNEAR = 1e-6
_DEN_EPS = 1e-12
# Splats are processed in fixed-size chunks; the chunk grid never depends
# on the worker count, and chunk results merge in chunk order, so output
# is byte-identical for any number of workers.
_CHUNK = 32


def worker_count(n_workers: int | None = None) -> int:
    """Resolve the worker count: explicit arg, else ASAP_THREADS, else cores."""
    if n_workers is not None:
        return max(1, int(n_workers))
    env = os.environ.get("ASAP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class Scene:
    """Struct-of-arrays splat collection plus per-splat optional textures."""

    means: np.ndarray           # (N, 3)
    rotations: np.ndarray       # (N, 4) wxyz
    log_scales: np.ndarray      # (N, 2)
    opacity_logits: np.ndarray  # (N,)
    base_colors: np.ndarray     # (N, 3)
    textures: list = field(default_factory=list)  # list[TexelGrid | None]
    version: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 2)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.base_colors = np.asarray(self.base_colors, dtype=np.float64).reshape(n, 3)
        if not self.textures:
            self.textures = [None] * n
        if len(self.textures) != n:
            raise ValueError("textures list must have one entry per splat")
        channels = {t.channels for t in self.textures if t is not None}
        if len(channels) > 1:
            raise ValueError("all textures in a scene must share a channel count")

    @property
    def n_splats(self) -> int:
        return self.means.shape[0]

    def splat(self, i: int) -> SplatGeometry:
        return SplatGeometry(self.means[i], self.rotations[i], self.log_scales[i],
                             self.opacity_logits[i], self.base_colors[i])

    @classmethod
    def from_splats(cls, splats, textures=None) -> "Scene":
        splats = list(splats)
        return cls(
            means=np.array([s.mean for s in splats]).reshape(-1, 3),
            rotations=np.array([s.rotation for s in splats]).reshape(-1, 4),
            log_scales=np.array([s.log_scale for s in splats]).reshape(-1, 2),
            opacity_logits=np.array([s.opacity_logit for s in splats]).reshape(-1),
            base_colors=np.array([s.base_color for s in splats]).reshape(-1, 3),
            textures=list(textures) if textures is not None else [None] * len(splats),
        )

    def copy(self) -> "Scene":
        return Scene(self.means.copy(), self.rotations.copy(), self.log_scales.copy(),
                     self.opacity_logits.copy(), self.base_colors.copy(),
                     [t.copy() if t is not None else None for t in self.textures],
                     self.version)

    def bump(self) -> None:
        """Mark the scene mutated; renders tape this version for staleness checks."""
        self.version += 1

    def normalize_rotations(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations /= norms

    def texel_scalars(self) -> int:
        return sum(t.n_scalars for t in self.textures if t is not None)

    def texel_cells(self) -> int:
        return sum(t.n_texels for t in self.textures if t is not None)

    def active_textures(self) -> int:
        return sum(1 for t in self.textures if t is not None)

    def parameter_count(self) -> int:
        """13 base scalars per splat plus every texel scalar."""
        return 13 * self.n_splats + self.texel_scalars()


@dataclass
class TexelTable:
    """Packed view of every texture in a scene for flat batched sampling."""

    has_tex: np.ndarray   # (N,) bool
    offsets: np.ndarray   # (N,) int64 into flat
    tu: np.ndarray        # (N,)
    tv: np.ndarray        # (N,)
    channels: int
    total: int
    flat: np.ndarray      # packed texel scalars

    @classmethod
    def from_scene(cls, scene: Scene) -> "TexelTable":
        n = scene.n_splats
        has = np.zeros(n, dtype=bool)
        off = np.zeros(n, dtype=np.int64)
        tu = np.ones(n, dtype=np.int64)
        tv = np.ones(n, dtype=np.int64)
        chunks = []
        channels = 3
        total = 0
        for k, t in enumerate(scene.textures):
            if t is None:
                continue
            has[k] = True
            off[k] = total
            tu[k], tv[k] = t.dims
            channels = t.channels
            total += t.n_scalars
            chunks.append(t.texels.ravel())
        flat = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(has, off, tu, tv, channels, total, flat)

    @property
    def any(self) -> bool:
        return self.total > 0


@dataclass
class ContributionTape:
    """Flat per-contribution records in blend (pixel, depth) order.

    pixel_start is a CSR offset table: contributions of flat pixel p live
    at [pixel_start[p], pixel_start[p + 1]).
    """

    pixel: np.ndarray        # (M,) flat pixel index, sorted
    splat: np.ndarray        # (M,) splat index
    u: np.ndarray            # (M,) canonical coordinates
    v: np.ndarray
    z: np.ndarray            # (M,) intersection depth
    alpha: np.ndarray        # (M,) final (capped) alpha
    t_before: np.ndarray     # (M,) transmittance before this contribution
    gaussian: np.ndarray     # (M,) G(u)
    atex: np.ndarray         # (M,) texture alpha multiplier (1 when absent)
    tc: np.ndarray           # (M, 2) texture coordinates (0.5 when untextured)
    color: np.ndarray        # (M, 3) clamped blend color
    color_unclamped: np.ndarray  # (M, 3)
    capped: np.ndarray       # (M,) bool, alpha hit the 1 - EPS_T cap
    pixel_start: np.ndarray  # (H*W + 1,)
    scene_version: int = 0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shape: tuple[int, int] = (0, 0)  # (H, W)

    @property
    def weights(self) -> np.ndarray:
        """Blend weights w_i = alpha_i * prod_{j<i}(1 - alpha_j)."""
        return self.alpha * self.t_before


@dataclass
class RenderOutput:
    image: np.ndarray                # (H, W, 3) linear RGB in [0, 1]
    final_transmittance: np.ndarray  # (H, W)
    tape: ContributionTape | None = None


# ---------------------------------------------------------------------------
# Scalar reference path (the vectorized renderer must agree with these)
# ---------------------------------------------------------------------------

def effective_alpha(g: SplatGeometry, t: TexelGrid | None, u, mode: WarpMode) -> float:
    """Opacity * Gaussian falloff, modulated by the RGBA texture alpha."""
    uv = u.uv if isinstance(u, CanonicalPoint) else np.asarray(u, dtype=np.float64)
    a = g.opacity * gaussian_weight(uv)
    if t is not None and t.channels == 4:
        tc = canonical_to_texcoord(uv, mode)
        a *= sigmoid(float(sample_texture(t, tc)[3]))
    return float(np.clip(a, 0.0, 1.0 - EPS_T))


def effective_color(g: SplatGeometry, t: TexelGrid | None, u, mode: WarpMode) -> np.ndarray:
    """Base color plus the sampled RGB offset, clamped to [0, 1]."""
    uv = u.uv if isinstance(u, CanonicalPoint) else np.asarray(u, dtype=np.float64)
    c = g.base_color
    if t is not None:
        tc = canonical_to_texcoord(uv, mode)
        c = c + sample_texture(t, tc)[:3]
    return np.clip(c, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Vectorized forward pass
# ---------------------------------------------------------------------------

def _camera_space_frames(scene: Scene, camera: Camera):
    """Per-splat camera-space unit axes, centers, scales, opacities."""
    Rw = camera.rotation
    R = quats_to_rotations(scene.rotations)          # (N, 3, 3)
    axes = np.einsum("ij,njk->nik", Rw, R)           # columns: u_hat, v_hat, n_hat
    mu = scene.means @ Rw.T + camera.translation     # (N, 3)
    s = np.exp(scene.log_scales)                     # (N, 2)
    o = sigmoid(scene.opacity_logits)
    valid = (s[:, 0] * s[:, 1]) > _DEN_EPS
    return axes, mu, s, o, valid


def _screen_bboxes(camera: Camera, axes, mu, s, valid):
    """Conservative integer pixel bounds of each splat's R_CUT disk.

    The disk's world AABB uses the exact ellipse extent per component,
    sqrt((s_u u_j)^2 + (s_v v_j)^2) * R_CUT.  Boxes are supersets; pixels
    beyond the cutoff are culled later by the r <= R_CUT test.  Empty
    boxes have ix0 > ix1.
    """
    width, height = camera.resolution
    fx, fy = camera.focal
    cx, cy = camera.principal
    n = mu.shape[0]
    extent = R_CUT * np.sqrt((axes[:, :, 0] * s[:, 0:1]) ** 2
                             + (axes[:, :, 1] * s[:, 1:2]) ** 2)
    lo = mu - extent
    hi = mu + extent

    px_lo = np.full(n, np.inf)
    px_hi = np.full(n, -np.inf)
    py_lo = np.full(n, np.inf)
    py_hi = np.full(n, -np.inf)

    if camera.mode == "planar":
        px_lo = fx * lo[:, 0] + cx
        px_hi = fx * hi[:, 0] + cx
        py_lo = fy * lo[:, 1] + cy
        py_hi = fy * hi[:, 1] + cy
        drawable = valid & (hi[:, 2] > 0)
    else:
        behind = hi[:, 2] <= _ZNEAR
        crosses = (lo[:, 2] <= _ZNEAR) & ~behind
        front = ~behind & ~crosses
        if np.any(front):
            zlo = lo[front, 2]
            zhi = hi[front, 2]
            for xsel in (lo, hi):
                for zsel in (zlo, zhi):
                    qx = fx * xsel[front, 0] / zsel + cx
                    qy = fy * xsel[front, 1] / zsel + cy
                    px_lo[front] = np.minimum(px_lo[front], qx)
                    px_hi[front] = np.maximum(px_hi[front], qx)
                    py_lo[front] = np.minimum(py_lo[front], qy)
                    py_hi[front] = np.maximum(py_hi[front], qy)
        # a disk straddling the camera plane can project anywhere
        px_lo[crosses] = 0.0
        px_hi[crosses] = width
        py_lo[crosses] = 0.0
        py_hi[crosses] = height
        drawable = valid & ~behind

    # pixel centers at index + 0.5; pad one pixel for conservatism
    with np.errstate(invalid="ignore"):
        ix0 = np.clip(np.floor(px_lo - 0.5) - 1, 0, width - 1)
        ix1 = np.clip(np.ceil(px_hi - 0.5) + 1, 0, width - 1)
        iy0 = np.clip(np.floor(py_lo - 0.5) - 1, 0, height - 1)
        iy1 = np.clip(np.ceil(py_hi - 0.5) + 1, 0, height - 1)
    ix0 = np.where(drawable, ix0, 1).astype(np.int64)
    ix1 = np.where(drawable, ix1, 0).astype(np.int64)
    iy0 = np.where(drawable, iy0, 1).astype(np.int64)
    iy1 = np.where(drawable, iy1, 0).astype(np.int64)
    return ix0, ix1, iy0, iy1


_MODE_CODE = {WarpMode.NONE: 0, WarpMode.AXIS: 1, WarpMode.RADIAL: 2}


def _geometry_chunk(camera: Camera, frames, bboxes, chunk):
    """Run the intersection kernel for one fixed chunk of splats."""
    from ._kernels import geometry_pass

    axes, mu, s, _, _ = frames
    ix0, ix1, iy0, iy1 = bboxes
    cap = int(np.sum(np.maximum(ix1[chunk] - ix0[chunk] + 1, 0)
                     * np.maximum(iy1[chunk] - iy0[chunk] + 1, 0)))
    pix = np.empty(cap, dtype=np.int64)
    sid = np.empty(cap, dtype=np.int64)
    uu = np.empty(cap)
    vv = np.empty(cap)
    zz = np.empty(cap)
    gw = np.empty(cap)
    m = geometry_pass(chunk, ix0, ix1, iy0, iy1, axes, mu, s,
                      camera.resolution[0], camera.focal[0], camera.focal[1],
                      camera.principal[0], camera.principal[1],
                      camera.mode == "planar",
                      pix, sid, uu, vv, zz, gw)
    return pix[:m], sid[:m], uu[:m], vv[:m], zz[:m], gw[:m]


def render(scene: Scene, camera: Camera, mode: WarpMode = WarpMode.NONE,
           background=(0.0, 0.0, 0.0), keep_tape: bool = False,
           n_workers: int | None = None) -> RenderOutput:
    """Render the scene through the camera with front-to-back blending.

    Degenerate splats (collapsed scales, edge-on planes, behind-camera
    intersections) are skipped per view or per pixel.  Traversal stops
    once transmittance drops below EPS_T.
    """
    from ._kernels import blend_pass, sample_pass, texcoord_pass

    mode = WarpMode.parse(mode)
    width, height = camera.resolution
    npix = width * height
    bg = np.asarray(background, dtype=np.float64).reshape(3)

    frames = _camera_space_frames(scene, camera)
    valid = frames[4]
    bboxes = _screen_bboxes(camera, frames[0], frames[1], frames[2], valid)

    indices = np.nonzero(valid)[0]
    chunks = [indices[i:i + _CHUNK] for i in range(0, len(indices), _CHUNK)]
    workers = worker_count(n_workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda c: _geometry_chunk(camera, frames, bboxes, c), chunks))
    else:
        parts = [_geometry_chunk(camera, frames, bboxes, c) for c in chunks]

    if parts:
        pix, sid, uu, vv, zz, gw = (np.concatenate(cols) for cols in zip(*parts))
    else:
        pix = sid = np.zeros(0, dtype=np.int64)
        uu = vv = zz = gw = np.zeros(0)

    order = np.lexsort((sid, zz, pix))
    pix = pix[order]
    sid = sid[order]
    uu = uu[order]
    vv = vv[order]
    zz = zz[order]
    gw = gw[order]

    table = TexelTable.from_scene(scene)
    o_all = sigmoid(scene.opacity_logits)
    any_tex = table.any
    rgba = any_tex and table.channels == 4
    mode_code = _MODE_CODE[mode]

    atex = np.ones(pix.size)
    sampled_rgb = None   # RGB offsets for textured contributions, if sampled early

    if rgba:
        # alpha depends on the texture: warp and sample before blending
        tc0 = np.full(pix.size, 0.5)
        tc1 = np.full(pix.size, 0.5)
        texcoord_pass(uu, vv, sid, table.has_tex, mode_code, tc0, tc1)
        tex_mask = table.has_tex[sid]
        ti = np.flatnonzero(tex_mask)
        sampled = np.empty((ti.size, 4))
        sample_pass(table.flat, table.offsets, table.tu, table.tv, 4,
                    sid[ti], tc0[ti], tc1[ti], sampled)
        sampled_rgb = sampled[:, :3]
        atex[ti] = sigmoid(sampled[:, 3])

    alpha_raw = o_all[sid] * gw * atex
    capped = alpha_raw >= 1.0 - EPS_T
    alpha = np.minimum(alpha_raw, 1.0 - EPS_T)

    t_before = np.empty(pix.size)
    include = np.empty(pix.size, dtype=bool)
    t_final = np.ones(npix)
    blend_pass(pix, alpha, t_before, include, t_final)

    if not include.all():
        if rgba:
            sampled_rgb = sampled_rgb[include[tex_mask.nonzero()[0]]]
            tc0 = tc0[include]
            tc1 = tc1[include]
        pix = pix[include]
        sid = sid[include]
        uu = uu[include]
        vv = vv[include]
        zz = zz[include]
        gw = gw[include]
        atex = atex[include]
        alpha = alpha[include]
        capped = capped[include]
        t_before = t_before[include]

    if not rgba:
        # opaque textures do not affect blending: warp only the survivors
        tc0 = np.full(pix.size, 0.5)
        tc1 = np.full(pix.size, 0.5)
        if any_tex:
            texcoord_pass(uu, vv, sid, table.has_tex, mode_code, tc0, tc1)

    cu = scene.base_colors[sid].copy()
    if any_tex:
        ti = np.flatnonzero(table.has_tex[sid])
        if ti.size:
            if sampled_rgb is None:
                sampled_rgb = np.empty((ti.size, 3))
                sample_pass(table.flat, table.offsets, table.tu, table.tv, 3,
                            sid[ti], tc0[ti], tc1[ti], sampled_rgb)
            cu[ti] += sampled_rgb

    color = np.clip(cu, 0.0, 1.0)
    w = alpha * t_before

    wc = w[:, None] * color
    image = np.empty((npix, 3))
    for c in range(3):
        image[:, c] = np.bincount(pix, weights=wc[:, c], minlength=npix)
    image += t_final[:, None] * bg

    out = RenderOutput(
        image=image.reshape(height, width, 3),
        final_transmittance=t_final.reshape(height, width),
    )
    if keep_tape:
        counts = np.bincount(pix, minlength=npix)
        pixel_start = np.zeros(npix + 1, dtype=np.int64)
        np.cumsum(counts, out=pixel_start[1:])
        out.tape = ContributionTape(
            pixel=pix, splat=sid, u=uu, v=vv, z=zz, alpha=alpha,
            t_before=t_before, gaussian=gw, atex=atex,
            tc=np.stack([tc0, tc1], axis=1),
            color=color, color_unclamped=cu, capped=capped,
            pixel_start=pixel_start, scene_version=scene.version,
            background=bg, shape=(height, width),
        )
    return out
