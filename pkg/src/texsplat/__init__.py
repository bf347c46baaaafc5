"""Differentiable textured 2D Gaussian splatting.

Flat Gaussian primitives carry per-splat textures sampled through
mass-aware CDF warps; an error-driven controller grows texture resolution
anisotropically where gradients demand it.  Rendering, the hand-derived
backward pass and the trainer are pure NumPy and deterministic for a
given seed.
"""

from .geometry import (Camera, CanonicalPoint, NoIntersection, R_CUT,
                       SingularTransform, SplatGeometry,
                       build_homogeneous_transform, gaussian_weight, intersect,
                       ray_transform)
from .gradients import (FDReport, GradientSet, NonFiniteGradient, StaleTape,
                        backward, finite_difference_check, quadratic_image_loss)
from .growth import (GrowthAction, GrowthEvent, GrowthLedger, accumulate,
                     apply_growth, decide, pressures)
from .estimator import TexturedSplatFitter
from .initialization import init_planar_scene, planar_camera
from .losses import photometric_loss, psnr, ssim
from .renderer import (EPS_T, EPS_VIS, ContributionTape, RenderOutput, Scene,
                       effective_alpha, effective_color, render)
from .sceneio import (SceneDocument, load_checkpoint, load_dataset, load_image,
                      load_scene, save_checkpoint, save_image, save_scene)
from .texture import (InvalidDims, TexelGrid, WarpMode, canonical_to_texcoord,
                      init_texture, resample_texture, sample_texture,
                      verify_warp_density, warp_axis, warp_radial)
from .toys import make_toy
from .training import AdamState, TrainConfig, TrainResult, adam_step, evaluate, train
from .validation import ShapeMismatch

__version__ = "0.1.0"

__all__ = [
    "Camera", "CanonicalPoint", "NoIntersection", "R_CUT", "SingularTransform",
    "SplatGeometry", "build_homogeneous_transform", "gaussian_weight",
    "intersect", "ray_transform",
    "FDReport", "GradientSet", "NonFiniteGradient", "StaleTape", "backward",
    "finite_difference_check", "quadratic_image_loss",
    "GrowthAction", "GrowthEvent", "GrowthLedger", "accumulate", "apply_growth",
    "decide", "pressures",
    "TexturedSplatFitter", "init_planar_scene", "planar_camera",
    "photometric_loss", "psnr", "ssim",
    "EPS_T", "EPS_VIS", "ContributionTape", "RenderOutput", "Scene",
    "effective_alpha", "effective_color", "render",
    "SceneDocument", "load_checkpoint", "load_dataset", "load_image",
    "load_scene", "save_checkpoint", "save_image", "save_scene",
    "InvalidDims", "TexelGrid", "WarpMode", "canonical_to_texcoord",
    "init_texture", "resample_texture", "sample_texture", "verify_warp_density",
    "warp_axis", "warp_radial",
    "make_toy",
    "AdamState", "TrainConfig", "TrainResult", "adam_step", "evaluate", "train",
    "ShapeMismatch",
    "__version__",
]
