"""Adam, TrainConfig, the training loop and its determinism."""

import numpy as np
import pytest

from conftest import fronto_splat, planar_camera

from texsplat.renderer import Scene, render
from texsplat.texture import TexelGrid, WarpMode, resample_texture
from texsplat.training import (AdamState, TrainConfig, adam_step, evaluate,
                               train)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState()
        state.register("means", p.shape)
        adam_step({"means": p}, {"means": np.zeros(3)}, state, {"means": 0.1})
        assert np.array_equal(p, [1.0, -2.0, 3.0])

    def test_first_step_magnitude(self):
        # bias-corrected m/(sqrt(v)+eps) is +-1 on the first step
        p = np.array([0.0])
        state = AdamState()
        state.register("means", p.shape)
        adam_step({"means": p}, {"means": np.array([1.0])}, state, {"means": 0.1})
        assert p[0] == pytest.approx(-0.1, rel=1e-12)

    def test_constant_gradient_keeps_unit_steps(self):
        p = np.array([0.0])
        state = AdamState()
        state.register("means", p.shape)
        for _ in range(10):
            adam_step({"means": p}, {"means": np.array([2.5])}, state, {"means": 0.01})
        assert p[0] == pytest.approx(-0.1, rel=1e-9)

    def test_group_rates(self):
        pa = np.array([0.0])
        pb = np.array([0.0])
        state = AdamState()
        state.register("means", (1,))
        state.register("texels", (1,))
        adam_step({"means": pa, "texels": pb},
                  {"means": np.array([1.0]), "texels": np.array([1.0])},
                  state, {"means": 0.1, "texels": 0.2})
        assert pa[0] == pytest.approx(-0.1, rel=1e-12)
        assert pb[0] == pytest.approx(-0.2, rel=1e-12)

    def test_moment_resampling_uses_bilinear_operator(self, rng):
        m = rng.uniform(-1, 1, (2, 2, 3))
        v = rng.uniform(0, 1, (2, 2, 3))
        state = AdamState()
        rm, rv = state.resample_texture_moments(0, m, v, (4, 4), t_max=8)
        assert np.array_equal(rm, resample_texture(TexelGrid(m), (4, 4)).texels)
        assert np.array_equal(rv, resample_texture(TexelGrid(v), (4, 4)).texels)
        assert rv.min() >= 0.0


class TestTrainConfig:
    def test_defaults_resolve(self):
        cfg = TrainConfig()
        assert cfg.resolved_growth_stop() == cfg.total_steps // 4
        assert cfg.mode is WarpMode.AXIS
        assert cfg.n_channels == 3

    def test_round_trip(self):
        cfg = TrainConfig(lambda_ssim=0.3, warp_mode="radial", channels="rgba")
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"total_steps": 5, "bogus": 1})

    def test_unknown_lr_group_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr={"quaternions": 1e-3})

    def test_invalid_thresholds(self):
        with pytest.raises(ValueError):
            TrainConfig(tau_base=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lambda_ssim=2.0)


def constant_target(size, color):
    return np.tile(np.asarray(color, dtype=np.float64), (size, size, 1))


class TestTrainLoop:
    def test_single_splat_learns_constant_color(self):
        # one huge near-opaque splat against a flat target: pure L1 descent
        size = 16
        splat = fronto_splat(size / 2, size / 2, 1.0, sigma=200.0,
                             color=(0.5, 0.5, 0.5))
        splat.opacity_logit = 9.0
        scene = Scene.from_splats([splat])
        target = constant_target(size, (0.35, 0.5, 0.65))
        cfg = TrainConfig(total_steps=200, lambda_ssim=0.0, eval_every=200,
                          growth_stop_step=0, seed=3)
        result = train(scene, [(planar_camera(size), target)], cfg)
        assert result.metrics[-1]["loss"] < 1e-3

    def test_huge_threshold_freezes_textures(self):
        size = 16
        scene = Scene.from_splats([fronto_splat(8.0, 8.0, 1.0, sigma=4.0)])
        target = constant_target(size, (0.4, 0.4, 0.4))
        cfg = TrainConfig(total_steps=120, tau_base=1e300, tau_tex=1e300,
                          n_tex_interval=20, growth_stop_step=120,
                          eval_every=60, lambda_ssim=0.0)
        result = train(scene, [(planar_camera(size), target)], cfg)
        assert result.growth_events == []
        assert result.metrics[-1]["texel_count"] == 0
        assert result.metrics[-1]["active_textures"] == 0

    def test_growth_path_updates_optimizer_state(self):
        # tiny thresholds force activation and growth during the run
        size = 16
        scene = Scene.from_splats([fronto_splat(8.0, 8.0, 1.0, sigma=4.0,
                                                color=(0.3, 0.3, 0.3))])
        target = np.zeros((size, size, 3))
        target[:, : size // 2] = 0.9
        cfg = TrainConfig(total_steps=150, tau_base=1e-12, tau_tex=1e-12,
                          n_tex_interval=25, growth_stop_step=150,
                          eval_every=150, lambda_ssim=0.0, seed=1)
        result = train(scene, [(planar_camera(size), target)], cfg)
        assert result.growth_events
        assert result.metrics[-1]["active_textures"] == 1
        grid = result.scene.textures[0]
        assert result.adam.m["texels"].size == grid.texels.size
        assert result.metrics[-1]["texel_count"] == grid.texels.size

    def test_deterministic_across_worker_counts(self, rng):
        size = 16
        splats = [fronto_splat(rng.uniform(2, 14), rng.uniform(2, 14),
                               rng.uniform(0.5, 2.0), sigma=3.0,
                               color=rng.uniform(0.2, 0.8, 3))
                  for _ in range(12)]
        target = np.clip(rng.uniform(0, 1, (size, size, 3)), 0, 1)
        cfg = TrainConfig(total_steps=40, eval_every=10, lambda_ssim=0.2,
                          tau_base=1e-7, tau_tex=1e-9, n_tex_interval=10,
                          growth_stop_step=40, seed=11)
        results = [train(Scene.from_splats(splats), [(planar_camera(size), target)],
                         cfg, n_workers=w) for w in (1, 2, 8)]
        for other in results[1:]:
            assert results[0].metrics == other.metrics
            assert np.array_equal(results[0].scene.means, other.scene.means)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(Scene.from_splats([fronto_splat(1, 1, 1)]), [], TrainConfig())

    def test_evaluate_reports_mean_psnr(self, rng):
        scene = Scene.from_splats([fronto_splat(8.0, 8.0, 1.0, sigma=50.0)])
        cam = planar_camera(16)
        img = render(scene, cam, WarpMode.NONE).image
        p, s = evaluate(scene, [(cam, img)], WarpMode.NONE)
        assert p == np.inf
        assert s == pytest.approx(1.0, abs=1e-12)
