"""Flat 2D Gaussian primitives and the canonical <-> world <-> camera mappings.

A splat is a unit Gaussian living on a local tangent plane.  Canonical
coordinates (u, v) on that plane are related to world space by an affine
frame (mean, scaled principal axes) and to pixels by a pinhole or
planar-orthographic camera.  Everything here is a pure function; the
renderer vectorizes the same math over pixel batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Splats contribute nothing beyond 3 canonical units (3 sigma); this bounds
# each splat's screen footprint.
R_CUT = 3.0

_DET_EPS = 1e-12


class SingularTransform(ValueError):
    """Splat frame is degenerate (collapsed scales or parallel axes)."""


class NoIntersection(ValueError):
    """Pixel ray misses the splat plane or hits it behind the camera."""


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def inverse_sigmoid(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Quaternions.  Convention: (w, x, y, z), normalized at point of use so the
# stored vector can drift freely during optimization.
# ---------------------------------------------------------------------------

def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (possibly unnormalized) wxyz quaternion.

    Columns are the frame axes: t_u = R[:, 0], t_v = R[:, 1], n = R[:, 2].
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("degenerate quaternion (norm ~ 0)")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quats_to_rotations(quats: np.ndarray) -> np.ndarray:
    """Batch version of :func:`quat_to_rotation` for an (N, 4) array."""
    q = np.asarray(quats, dtype=np.float64)
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate quaternion in batch")
    w, x, y, z = (q / norms[:, None]).T
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _rotation_jacobian_unit(qh: np.ndarray) -> np.ndarray:
    """dR/dq_hat for unit quaternions, shape (..., 3, 3, 4)."""
    w, x, y, z = np.moveaxis(qh, -1, 0)
    zero = np.zeros_like(w)
    J = np.empty(w.shape + (3, 3, 4))
    # dR/dw
    J[..., 0, 0, 0] = zero
    J[..., 0, 1, 0] = -2 * z
    J[..., 0, 2, 0] = 2 * y
    J[..., 1, 0, 0] = 2 * z
    J[..., 1, 1, 0] = zero
    J[..., 1, 2, 0] = -2 * x
    J[..., 2, 0, 0] = -2 * y
    J[..., 2, 1, 0] = 2 * x
    J[..., 2, 2, 0] = zero
    # dR/dx
    J[..., 0, 0, 1] = zero
    J[..., 0, 1, 1] = 2 * y
    J[..., 0, 2, 1] = 2 * z
    J[..., 1, 0, 1] = 2 * y
    J[..., 1, 1, 1] = -4 * x
    J[..., 1, 2, 1] = -2 * w
    J[..., 2, 0, 1] = 2 * z
    J[..., 2, 1, 1] = 2 * w
    J[..., 2, 2, 1] = -4 * x
    # dR/dy
    J[..., 0, 0, 2] = -4 * y
    J[..., 0, 1, 2] = 2 * x
    J[..., 0, 2, 2] = 2 * w
    J[..., 1, 0, 2] = 2 * x
    J[..., 1, 1, 2] = zero
    J[..., 1, 2, 2] = 2 * z
    J[..., 2, 0, 2] = -2 * w
    J[..., 2, 1, 2] = 2 * z
    J[..., 2, 2, 2] = -4 * y
    # dR/dz
    J[..., 0, 0, 3] = -4 * z
    J[..., 0, 1, 3] = -2 * w
    J[..., 0, 2, 3] = 2 * x
    J[..., 1, 0, 3] = 2 * w
    J[..., 1, 1, 3] = -4 * z
    J[..., 1, 2, 3] = 2 * y
    J[..., 2, 0, 3] = 2 * x
    J[..., 2, 1, 3] = 2 * y
    J[..., 2, 2, 3] = zero
    return J


def quat_rotation_jacobian(quats: np.ndarray) -> np.ndarray:
    """dR/dq through the normalization q_hat = q/||q||.

    Accepts (4,) or (N, 4); returns (3, 3, 4) or (N, 3, 3, 4).
    """
    q = np.asarray(quats, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    norms = np.linalg.norm(q, axis=1)
    qh = q / norms[:, None]
    Jh = _rotation_jacobian_unit(qh)  # (N, 3, 3, 4)
    # chain through normalization: dq_hat/dq = (I - q_hat q_hat^T) / ||q||
    P = (np.eye(4)[None] - qh[:, :, None] * qh[:, None, :]) / norms[:, None, None]
    J = np.einsum("nijk,nkl->nijl", Jh, P)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class SplatGeometry:
    """One flat Gaussian's spatial parameters in optimization encoding.

    Scales are stored as logs and opacity as a logit so every real-valued
    update keeps s > 0 and o in (0, 1); the quaternion is renormalized at
    every use.
    """

    mean: np.ndarray           # (3,) world units
    rotation: np.ndarray       # (4,) wxyz quaternion
    log_scale: np.ndarray      # (2,) log world units
    opacity_logit: float
    base_color: np.ndarray     # (3,) RGB, clamped to [0,1] at evaluation

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(2)
        self.opacity_logit = float(self.opacity_logit)
        self.base_color = np.asarray(self.base_color, dtype=np.float64).reshape(3)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (t_u, t_v, n) from the quaternion."""
        R = quat_to_rotation(self.rotation)
        return R[:, 0], R[:, 1], R[:, 2]

    def normalized(self) -> "SplatGeometry":
        q = self.rotation / np.linalg.norm(self.rotation)
        return SplatGeometry(self.mean.copy(), q, self.log_scale.copy(),
                             self.opacity_logit, self.base_color.copy())

    def point_at(self, u: float, v: float) -> np.ndarray:
        """World point mean + s_u t_u u + s_v t_v v."""
        t_u, t_v, _ = self.frame()
        s_u, s_v = self.scales
        return self.mean + s_u * t_u * u + s_v * t_v * v


@dataclass
class Camera:
    """Pinhole (perspective) or planar-orthographic camera.

    Planar mode keeps splats on the image plane: the world-to-camera
    transform must be identity and pixels map orthographically as
    px = fx * X + cx, so toy 2D fits exercise the same blending and
    texture code path without camera math.
    """

    world_to_camera: np.ndarray   # (4, 4), rigid
    focal: np.ndarray             # (fx, fy) pixels
    principal: np.ndarray         # (cx, cy) pixels
    resolution: tuple[int, int]   # (width, height)
    mode: str = "perspective"

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        self.focal = np.asarray(self.focal, dtype=np.float64).reshape(2)
        self.principal = np.asarray(self.principal, dtype=np.float64).reshape(2)
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        if self.mode not in ("perspective", "planar"):
            raise ValueError(f"unknown camera mode {self.mode!r}")
        R = self.world_to_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("world_to_camera rotation block must be orthonormal with det +1")
        if not np.allclose(self.world_to_camera[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("world_to_camera bottom row must be (0,0,0,1)")
        if np.any(self.focal <= 0):
            raise ValueError("focal components must be positive")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise ValueError("resolution components must be >= 1")
        if self.mode == "planar" and not np.allclose(self.world_to_camera, np.eye(4), atol=1e-12):
            raise ValueError("planar mode requires an identity world_to_camera")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def pixel_ray(self, px: float, py: float) -> tuple[np.ndarray, np.ndarray]:
        """Camera-space (origin, direction) of the ray through pixel (px, py).

        Pixel coordinates are continuous; pixel index (ix, iy) has its
        center at (ix + 0.5, iy + 0.5).
        """
        rx = (px - self.principal[0]) / self.focal[0]
        ry = (py - self.principal[1]) / self.focal[1]
        if self.mode == "perspective":
            return np.zeros(3), np.array([rx, ry, 1.0])
        return np.array([rx, ry, 0.0]), np.array([0.0, 0.0, 1.0])

    def project(self, points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to continuous pixel coordinates.

        Returns (pixels (..., 2), depths (...)).  Perspective points at
        z <= 0 produce non-finite pixels rather than raising.
        """
        p = np.asarray(points_world, dtype=np.float64)
        cam = p @ self.rotation.T + self.translation
        z = cam[..., 2]
        if self.mode == "perspective":
            with np.errstate(divide="ignore", invalid="ignore"):
                px = self.focal[0] * cam[..., 0] / z + self.principal[0]
                py = self.focal[1] * cam[..., 1] / z + self.principal[1]
            px = np.where(z > 0, px, np.nan)
            py = np.where(z > 0, py, np.nan)
        else:
            px = self.focal[0] * cam[..., 0] + self.principal[0]
            py = self.focal[1] * cam[..., 1] + self.principal[1]
        return np.stack([px, py], axis=-1), z


@dataclass
class CanonicalPoint:
    """Ray-splat intersection in the splat's canonical frame."""

    uv: np.ndarray     # (2,) dimensionless
    depth: float       # camera units, > 0 for valid intersections

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(2)
        self.depth = float(self.depth)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def build_homogeneous_transform(g: SplatGeometry) -> np.ndarray:
    """4x4 canonical-to-world transform [s_u t_u | s_v t_v | 0 | mean].

    The third column is identically zero: the canonical homogeneous point
    is (u, v, 1, 1) and the splat has no extent along its normal.  See
    :func:`ray_transform` for how the null column is completed before
    inversion.
    """
    t_u, t_v, _ = g.frame()
    s_u, s_v = g.scales
    H = np.zeros((4, 4))
    H[:3, 0] = s_u * t_u
    H[:3, 1] = s_v * t_v
    H[:3, 3] = g.mean
    H[3, 3] = 1.0
    return H


def ray_transform(H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Precomputed camera-to-canonical matrix M for one splat and view.

    H's third column carries no information (the splat is flat), so it is
    completed with the unit plane normal to make the transform invertible;
    M maps camera-space homogeneous points into (u, v, q, 1) splat
    coordinates where q is the signed offset off the splat plane.

    Raises SingularTransform when |det(W H~)| < 1e-12, i.e. the splat is
    degenerate (scales collapsed or axes parallel) for this view.
    """
    H = np.asarray(H, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    c0 = H[:3, 0]
    c1 = H[:3, 1]
    normal = np.cross(c0, c1)
    nn = np.linalg.norm(normal)
    if nn < _DET_EPS:
        raise SingularTransform("splat axes are (near-)parallel or collapsed")
    Ht = H.copy()
    Ht[:3, 2] = normal / nn
    P = W @ Ht
    det = np.linalg.det(P)
    if abs(det) < _DET_EPS:
        raise SingularTransform(f"ray transform is singular (|det| = {abs(det):.3e})")
    return np.linalg.inv(P)


def intersect(M: np.ndarray, pixel: np.ndarray, orthographic: bool = False) -> CanonicalPoint:
    """Intersect the normalized camera ray (r_x, r_y) with the splat plane.

    `pixel` is the normalized ray form ((px-cx)/fx, (py-cy)/fy).  For a
    perspective camera the ray is t*(r_x, r_y, 1) from the origin; in
    orthographic (planar) mode it is (r_x, r_y, 0) + t*(0, 0, 1).  Either
    way the returned depth equals t.
    """
    M = np.asarray(M, dtype=np.float64)
    rx, ry = float(pixel[0]), float(pixel[1])
    if orthographic:
        o4 = np.array([rx, ry, 0.0, 1.0])
        d4 = np.array([0.0, 0.0, 1.0, 0.0])
    else:
        o4 = np.array([0.0, 0.0, 0.0, 1.0])
        d4 = np.array([rx, ry, 1.0, 0.0])
    os_ = M @ o4
    ds = M @ d4
    den = ds[2]
    if abs(den) < _DET_EPS:
        raise NoIntersection("ray parallel to splat plane")
    t = -os_[2] / den
    if t <= 0:
        raise NoIntersection("intersection behind the camera")
    u = os_[0] + t * ds[0]
    v = os_[1] + t * ds[1]
    return CanonicalPoint(np.array([u, v]), t)


def gaussian_weight(u) -> float:
    """Standard 2D Gaussian exp(-(u^2+v^2)/2), zero beyond R_CUT."""
    if isinstance(u, CanonicalPoint):
        uv = u.uv
    else:
        uv = np.asarray(u, dtype=np.float64)
    r2 = float(uv[0] * uv[0] + uv[1] * uv[1])
    if r2 > R_CUT * R_CUT:
        return 0.0
    return math.exp(-0.5 * r2)
