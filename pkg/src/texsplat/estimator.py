"""sklearn-style estimator facade over the planar image-fitting trainer.

TexturedSplatFitter follows the estimator contract (fit/predict/score,
get_params/set_params via BaseEstimator), so hyperparameter search and
pipeline tooling from the wider ecosystem compose with it.  X is a list
of cameras, y the matching target images.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .geometry import Camera
from .initialization import init_planar_scene
from .losses import psnr
from .renderer import Scene, render
from .training import TrainConfig, train
from .validation import check_image


class TexturedSplatFitter(BaseEstimator):
    """Fit textured 2D Gaussian splats to one or more target images.

    Parameters mirror TrainConfig plus scene-initialization knobs.
    texture_dims attaches fixed-size textures up front (growth is then
    disabled); leaving it None starts untextured with error-driven
    activation and growth.
    """

    def __init__(self, n_splats=200, warp_mode="axis", channels="rgb",
                 texture_dims=None, lambda_ssim=0.2, total_steps=1000,
                 learning_rates=None, tau_base=2e-5, tau_tex=6e-7,
                 n_tex_interval=100, growth_stop_step=None, n_max=6, t_max=8,
                 eval_every=200, random_state=0, n_workers=None):
        self.n_splats = n_splats
        self.warp_mode = warp_mode
        self.channels = channels
        self.texture_dims = texture_dims
        self.lambda_ssim = lambda_ssim
        self.total_steps = total_steps
        self.learning_rates = learning_rates
        self.tau_base = tau_base
        self.tau_tex = tau_tex
        self.n_tex_interval = n_tex_interval
        self.growth_stop_step = growth_stop_step
        self.n_max = n_max
        self.t_max = t_max
        self.eval_every = eval_every
        self.random_state = random_state
        self.n_workers = n_workers

    # -- config assembly ----------------------------------------------------

    def _config(self) -> TrainConfig:
        growth_stop = self.growth_stop_step
        if self.texture_dims is not None and growth_stop is None:
            growth_stop = 0  # fixed textures: no activation or growth
        return TrainConfig(
            lambda_ssim=self.lambda_ssim,
            total_steps=self.total_steps,
            lr=self.learning_rates or {},
            tau_base=self.tau_base,
            tau_tex=self.tau_tex,
            n_tex_interval=self.n_tex_interval,
            growth_stop_step=growth_stop,
            n_max=self.n_max,
            t_max=self.t_max,
            warp_mode=self.warp_mode,
            channels=self.channels,
            seed=self.random_state,
            eval_every=self.eval_every,
        )

    @staticmethod
    def _as_views(X, y=None):
        cameras = [X] if isinstance(X, Camera) else list(X)
        for cam in cameras:
            if not isinstance(cam, Camera):
                raise ValueError("X must contain Camera instances")
        if y is None:
            return cameras, None
        images = [y] if isinstance(y, np.ndarray) and np.ndim(y) == 3 else list(y)
        if len(images) != len(cameras):
            raise ValueError(f"got {len(cameras)} cameras but {len(images)} images")
        checked = []
        for cam, img in zip(cameras, images):
            img = check_image(img, "target")
            if img.shape[:2] != (cam.resolution[1], cam.resolution[0]):
                raise ValueError("target image shape does not match camera resolution")
            checked.append(img)
        return cameras, checked

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y, init_scene: Scene | None = None):
        """Optimize splats against (camera, image) pairs; returns self."""
        cameras, images = self._as_views(X, y)
        config = self._config()
        if init_scene is not None:
            scene0 = init_scene.copy()
        else:
            if any(cam.mode != "planar" for cam in cameras):
                raise ValueError("automatic initialization supports planar cameras "
                                 "only; pass init_scene for perspective fits")
            rng = np.random.default_rng(self.random_state)
            scene0 = init_planar_scene(images[0], int(self.n_splats), rng,
                                       texture_dims=self.texture_dims,
                                       channels=config.n_channels)
        result = train(scene0, list(zip(cameras, images)), config,
                       n_workers=self.n_workers)
        self.scene_ = result.scene
        self.config_ = config
        self.metrics_ = result.metrics
        self.growth_events_ = result.growth_events
        self.n_iter_ = config.total_steps
        return self

    def predict(self, X) -> np.ndarray:
        """Render the fitted scene through each camera; (n, H, W, 3)."""
        if not hasattr(self, "scene_"):
            raise NotFittedError("call fit before predict")
        cameras, _ = self._as_views(X)
        images = [render(self.scene_, cam, self.config_.mode, keep_tape=False,
                         n_workers=self.n_workers).image for cam in cameras]
        return np.stack(images)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the renders against the targets."""
        cameras, images = self._as_views(X, y)
        preds = self.predict(cameras)
        return float(np.mean([psnr(p, t) for p, t in zip(preds, images)]))
