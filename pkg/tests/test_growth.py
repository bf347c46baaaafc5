"""Growth controller: accumulation, pressures, decisions, application."""

import numpy as np
import pytest

from conftest import fronto_splat

from texsplat.gradients import GradientSet
from texsplat.growth import (GrowthAction, GrowthLedger, accumulate,
                             apply_growth, decide, pressures)
from texsplat.renderer import Scene
from texsplat.texture import TexelGrid
from texsplat.validation import ShapeMismatch


def make_scene(texture_dims=None, n=1, scales=(1.0, 1.0), channels=3):
    splats = []
    textures = []
    for _ in range(n):
        g = fronto_splat(8.0, 8.0, 1.0)
        g.log_scale = np.log(scales)
        splats.append(g)
        textures.append(TexelGrid(np.zeros(texture_dims + (channels,)))
                        if texture_dims else None)
    return Scene.from_splats(splats, textures)


def zero_grads(scene):
    n = scene.n_splats
    return GradientSet(
        d_means=np.zeros((n, 3)), d_rotations=np.zeros((n, 4)),
        d_log_scales=np.zeros((n, 2)), d_opacity_logits=np.zeros(n),
        d_base_colors=np.zeros((n, 3)),
        d_texels=[None if t is None else np.zeros_like(t.texels)
                  for t in scene.textures],
        visible=np.zeros(n, dtype=bool), base_attr_norm=np.zeros(n))


class Config:
    def __init__(self, tau_base=4e-6, tau_tex=2e-7, t_max=8, n_max=6):
        self.tau_base = tau_base
        self.tau_tex = tau_tex
        self.t_max = t_max
        self.n_max = n_max


class TestAccumulate:
    def test_zero_gradient_only_counts_visibility(self):
        scene = make_scene(texture_dims=(2, 1))
        ledger = GrowthLedger.for_scene(scene)
        accumulate(ledger, zero_grads(scene), np.array([True]))
        assert ledger.n_g[0] == 1
        assert np.array_equal(ledger.g_u[0], np.zeros(2))
        assert ledger.base_pressure[0] == 0.0

    def test_row_column_sums(self):
        # 2x1 texture, per-channel |grad| a and b over c channels
        scene = make_scene(texture_dims=(2, 1), channels=3)
        ledger = GrowthLedger.for_scene(scene)
        grads = zero_grads(scene)
        a, b = 0.25, 0.5
        grads.d_texels[0][0, 0, :] = -a   # abs is taken
        grads.d_texels[0][1, 0, :] = b
        accumulate(ledger, grads, np.array([True]))
        assert np.allclose(ledger.g_u[0], [3 * a, 3 * b])
        assert np.allclose(ledger.g_v[0], [3 * (a + b)])

    def test_invisible_splat_untouched(self):
        # invisibility implies exactly-zero gradients, so nothing accrues
        scene = make_scene()
        ledger = GrowthLedger.for_scene(scene)
        accumulate(ledger, zero_grads(scene), np.array([False]))
        assert ledger.n_g[0] == 0
        assert ledger.base_pressure[0] == 0.0

    def test_unactivated_accumulates_base_pressure(self):
        scene = make_scene()
        ledger = GrowthLedger.for_scene(scene)
        grads = zero_grads(scene)
        grads.base_attr_norm[0] = 1.5
        accumulate(ledger, grads, np.array([True]))
        accumulate(ledger, grads, np.array([True]))
        assert ledger.base_pressure[0] == 3.0

    def test_shape_mismatch(self):
        scene = make_scene(texture_dims=(2, 2))
        ledger = GrowthLedger.for_scene(scene)
        grads = zero_grads(scene)
        grads.d_texels[0] = np.zeros((3, 2, 3))
        with pytest.raises(ShapeMismatch):
            accumulate(ledger, grads, np.array([True]))


class TestPressures:
    def test_zero_visibility_degenerate(self):
        scene = make_scene(texture_dims=(2, 1))
        ledger = GrowthLedger.for_scene(scene)
        assert pressures(ledger, 0) == (0.0, 0.0)

    def test_worked_example(self):
        # 2x1 texture, g_u = (3, 5), g_v = (8), n_g = 4
        scene = make_scene(texture_dims=(2, 1))
        ledger = GrowthLedger.for_scene(scene)
        ledger.g_u[0][:] = [3.0, 5.0]
        ledger.g_v[0][:] = [8.0]
        ledger.n_g[0] = 4
        p_u, p_v = pressures(ledger, 0)
        assert p_u == pytest.approx(8.0 / (4 * 1))
        assert p_v == pytest.approx(8.0 / (4 * 2))

    def test_linearity(self):
        scene = make_scene(texture_dims=(3, 2))
        ledger = GrowthLedger.for_scene(scene)
        ledger.g_u[0][:] = [1.0, 2.0, 3.0]
        ledger.g_v[0][:] = [2.0, 4.0]
        ledger.n_g[0] = 2
        p1 = pressures(ledger, 0)
        ledger.g_u[0] *= 2
        ledger.g_v[0] *= 2
        p2 = pressures(ledger, 0)
        assert p2[0] == pytest.approx(2 * p1[0])
        assert p2[1] == pytest.approx(2 * p1[1])

    def test_normalizers_cancel_opposite_axis_count(self):
        # row and column sums both total the same gradient mass S, so the
        # normalizers guarantee p_u * T_v == p_v * T_u == S / n_g for any
        # mass distribution and aspect ratio
        scene = make_scene(texture_dims=(4, 2))
        ledger = GrowthLedger.for_scene(scene)
        grads = zero_grads(scene)
        grads.d_texels[0][:] = np.random.default_rng(5).uniform(0, 1, (4, 2, 3))
        accumulate(ledger, grads, np.array([True]))
        accumulate(ledger, grads, np.array([True]))
        p_u, p_v = pressures(ledger, 0)
        s = 2 * np.abs(grads.d_texels[0]).sum()
        assert p_u * 2 == pytest.approx(s / 2, rel=1e-12)
        assert p_v * 4 == pytest.approx(s / 2, rel=1e-12)


class TestDecide:
    def test_grow_u_above_threshold(self):
        scene = make_scene(texture_dims=(2, 1))
        ledger = GrowthLedger.for_scene(scene)
        ledger.g_u[0][:] = [1.5e-7, 1.5e-7]   # pressure 3e-7 > tau_tex
        ledger.g_v[0][:] = [1e-8]
        ledger.n_g[0] = 1
        actions = decide(ledger, Config())
        assert actions == [GrowthAction.GROW_U]
        # window statistics reset afterwards
        assert ledger.n_g[0] == 0
        assert np.array_equal(ledger.g_u[0], np.zeros(2))

    def test_activation_above_base_threshold(self):
        scene = make_scene()
        ledger = GrowthLedger.for_scene(scene)
        ledger.base_pressure[0] = 5e-6
        ledger.n_g[0] = 1
        assert decide(ledger, Config()) == [GrowthAction.ACTIVATE]

    def test_activation_below_threshold(self):
        scene = make_scene()
        ledger = GrowthLedger.for_scene(scene)
        ledger.base_pressure[0] = 3e-6   # mean 3e-6 < tau_base = 4e-6
        ledger.n_g[0] = 1
        assert decide(ledger, Config()) == [GrowthAction.NONE]

    def test_cap_forces_none(self):
        scene = make_scene(texture_dims=(8, 8))
        ledger = GrowthLedger.for_scene(scene)
        ledger.g_u[0][:] = 1.0
        ledger.g_v[0][:] = 1.0
        ledger.n_g[0] = 1
        assert decide(ledger, Config()) == [GrowthAction.NONE]

    def test_max_growth_steps_force_none(self):
        scene = make_scene(texture_dims=(2, 2))
        ledger = GrowthLedger.for_scene(scene)
        ledger.growth_steps[0] = 6
        ledger.g_u[0][:] = 1.0
        ledger.g_v[0][:] = 1.0
        ledger.n_g[0] = 1
        assert decide(ledger, Config(n_max=6)) == [GrowthAction.NONE]

    def test_both_axes(self):
        scene = make_scene(texture_dims=(2, 2))
        ledger = GrowthLedger.for_scene(scene)
        ledger.g_u[0][:] = 1.0
        ledger.g_v[0][:] = 1.0
        ledger.n_g[0] = 1
        assert decide(ledger, Config()) == [GrowthAction.GROW_BOTH]

    def test_determinism(self, rng):
        def run():
            scene = make_scene(texture_dims=(2, 2), n=5)
            ledger = GrowthLedger.for_scene(scene)
            stream = np.random.default_rng(42)
            history = []
            for _ in range(5):
                grads = zero_grads(scene)
                for k in range(5):
                    grads.d_texels[k][:] = stream.uniform(0, 1e-6, (2, 2, 3))
                accumulate(ledger, grads, np.ones(5, dtype=bool))
                history.append([a.value for a in decide(ledger, Config())])
            return history
        assert run() == run()


class TestApply:
    def test_activation_aspect(self):
        scene = make_scene(scales=(0.5, 2.0))
        ledger = GrowthLedger.for_scene(scene)
        ledger.last_pressures = np.zeros((1, 2))
        events = apply_growth(scene, ledger, [GrowthAction.ACTIVATE],
                              channels=3, t_max=8, step=100)
        assert scene.textures[0].dims == (1, 2)
        assert np.array_equal(scene.textures[0].texels, np.zeros((1, 2, 3)))
        assert events[0].action == "activate"
        assert events[0].old_dims == (0, 0)
        assert ledger.activated[0]

    def test_grow_u_doubles(self):
        scene = make_scene(texture_dims=(4, 4))
        ledger = GrowthLedger.for_scene(scene)
        ledger.last_pressures = np.zeros((1, 2))
        events = apply_growth(scene, ledger, [GrowthAction.GROW_U],
                              channels=3, t_max=8, step=1)
        assert scene.textures[0].dims == (8, 4)
        assert scene.textures[0].growth_steps == 1
        assert ledger.growth_steps[0] == 1
        assert events[0].new_dims == (8, 4)

    def test_grow_at_cap_is_noop(self):
        scene = make_scene(texture_dims=(8, 4))
        ledger = GrowthLedger.for_scene(scene)
        ledger.last_pressures = np.zeros((1, 2))
        events = apply_growth(scene, ledger, [GrowthAction.GROW_U],
                              channels=3, t_max=8, step=1)
        assert events == []
        assert scene.textures[0].dims == (8, 4)
        assert ledger.growth_steps[0] == 0

    def test_dims_monotone_under_random_stream(self, rng):
        scene = make_scene(texture_dims=(1, 2), n=4)
        ledger = GrowthLedger.for_scene(scene)
        cfg = Config(tau_tex=1e-9, n_max=6)
        seen = [scene.textures[k].dims for k in range(4)]
        for step in range(8):
            grads = zero_grads(scene)
            for k in range(4):
                grads.d_texels[k][:] = rng.uniform(0, 1e-6, grads.d_texels[k].shape)
            accumulate(ledger, grads, np.ones(4, dtype=bool))
            actions = decide(ledger, cfg)
            apply_growth(scene, ledger, actions, channels=3, t_max=8, step=step)
            for k in range(4):
                new = scene.textures[k].dims
                assert new[0] >= seen[k][0] and new[1] >= seen[k][1]
                assert new[0] <= 8 and new[1] <= 8
                seen[k] = new
        assert np.all(ledger.growth_steps <= 6)
