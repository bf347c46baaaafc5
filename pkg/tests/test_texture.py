"""CDF warps, texture coordinates, bilinear sampling, resampling, density."""

import math

import numpy as np
import pytest
from scipy import integrate

from texsplat.geometry import SplatGeometry
from texsplat.texture import (EPS_ALPHA, InvalidDims, NEUTRAL_ALPHA_LOGIT,
                              TexelGrid, WarpMode, canonical_to_texcoord,
                              init_texture, ks_uniform, resample_texture,
                              sample_texture, texcoord_jacobian,
                              verify_warp_density, warp_axis,
                              warp_axis_derivative, warp_radial,
                              warp_radial_jacobian)


def normal_cdf_quadrature(a: float) -> float:
    """Independent oracle: adaptive quadrature of the standard normal pdf.

    Integrates the finite interval [0, a] and adds the exact half mass,
    which keeps the quadrature error well below 1e-12.
    """
    pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    val, err = integrate.quad(pdf, 0.0, a, epsabs=1e-14)
    assert err < 1e-11  # an order below the 1e-10 comparison tolerance
    return 0.5 + val


def bilinear_reference(grid: TexelGrid, tc):
    """Straightforward scalar bilinear sampler (clamp-to-edge, half-texel centers)."""
    tu, tv = grid.dims
    x = tc[0] * tu - 0.5
    y = tc[1] * tv - 0.5
    i0 = int(np.clip(math.floor(x), 0, tu - 1))
    j0 = int(np.clip(math.floor(y), 0, tv - 1))
    fx = 0.0 if x < 0 else (1.0 if x > tu - 1 else x - math.floor(x))
    fy = 0.0 if y < 0 else (1.0 if y > tv - 1 else y - math.floor(y))
    i1 = min(i0 + 1, tu - 1)
    j1 = min(j0 + 1, tv - 1)
    a, b = grid.texels[i0, j0], grid.texels[i1, j0]
    c, d = grid.texels[i0, j1], grid.texels[i1, j1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


class TestAxisWarp:
    def test_center(self):
        assert warp_axis(0.0) == 0.5

    def test_limits(self):
        assert warp_axis(40.0) == pytest.approx(1.0, abs=1e-15)
        assert warp_axis(-40.0) == pytest.approx(0.0, abs=1e-15)

    def test_against_quadrature_oracle(self):
        assert warp_axis(1.0) == pytest.approx(0.841345, abs=1e-6)
        for a in np.linspace(-4, 4, 17):
            assert abs(warp_axis(a) - normal_cdf_quadrature(a)) < 1e-10

    def test_strictly_increasing(self):
        xs = np.linspace(-6, 6, 1000)
        assert np.all(np.diff(warp_axis(xs)) > 0)

    def test_derivative_is_normal_pdf(self, rng):
        # the backward-pass factor: checked against central differences
        a = rng.uniform(-3, 3, 100)
        h = 1e-6
        fd = (warp_axis(a + h) - warp_axis(a - h)) / (2 * h)
        rel = np.abs(warp_axis_derivative(a) - fd) / np.abs(fd)
        assert rel.max() < 1e-6


class TestRadialWarp:
    def test_fixed_point_at_center(self):
        assert np.array_equal(warp_radial([0.0, 0.0]), [0.0, 0.0])

    def test_half_mass_radius(self):
        r = math.sqrt(2 * math.log(2))  # solves 1 - exp(-r^2/2) = 1/2
        out = warp_radial([r, 0.0])
        assert np.linalg.norm(out) == pytest.approx(0.5, abs=1e-14)

    def test_direction_preserved_closed_form(self):
        u = np.array([0.6, 0.8]) * 2.0  # radius exactly 2
        out = warp_radial(u)
        assert np.linalg.norm(out) == pytest.approx(1 - math.exp(-2.0), abs=1e-14)
        assert np.allclose(out / np.linalg.norm(out), [0.6, 0.8], atol=1e-14)

    def test_norm_matches_rayleigh_cdf(self, rng):
        pts = rng.uniform(-3, 3, (200, 2))
        r = np.linalg.norm(pts, axis=1)
        out = np.linalg.norm(warp_radial(pts), axis=1)
        assert np.allclose(out, -np.expm1(-0.5 * r * r), rtol=1e-13, atol=1e-300)

    def test_radius_strictly_increasing(self):
        rs = np.linspace(0, 5, 500)
        pts = np.stack([rs, np.zeros_like(rs)], axis=1)
        out = np.linalg.norm(warp_radial(pts), axis=1)
        assert np.all(np.diff(out) > 0)

    def test_jacobian_matches_finite_differences(self, rng):
        h = 1e-6
        pts = np.concatenate([rng.uniform(-3, 3, (50, 2)),
                              rng.uniform(-1e-3, 1e-3, (10, 2))])
        J = warp_radial_jacobian(pts)
        for p, Jp in zip(pts, J):
            for k in range(2):
                dp = np.zeros(2)
                dp[k] = h
                fd = (warp_radial(p + dp) - warp_radial(p - dp)) / (2 * h)
                assert np.allclose(Jp[:, k], fd, atol=2e-9)


class TestTexcoord:
    @pytest.mark.parametrize("mode", list(WarpMode))
    def test_center_preservation(self, mode):
        assert np.allclose(canonical_to_texcoord([0.0, 0.0], mode), [0.5, 0.5])

    def test_axis_example_with_symmetry(self):
        tc = canonical_to_texcoord([1.0, -1.0], WarpMode.AXIS)
        assert tc[0] == pytest.approx(0.841345, abs=1e-6)
        assert tc[1] == pytest.approx(0.158655, abs=1e-6)
        assert tc[0] + tc[1] == pytest.approx(1.0, abs=1e-14)

    def test_none_box_corner(self):
        assert np.allclose(canonical_to_texcoord([3.0, 0.0], WarpMode.NONE), [1.0, 0.5])

    @pytest.mark.parametrize("mode", list(WarpMode))
    def test_range_inside_cutoff(self, mode, rng):
        theta = rng.uniform(0, 2 * np.pi, 500)
        r = 3.0 * np.sqrt(rng.uniform(0, 1, 500))
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        tc = canonical_to_texcoord(pts, mode)
        assert tc.min() >= 0.0 and tc.max() <= 1.0

    @pytest.mark.parametrize("mode", list(WarpMode))
    def test_jacobian_matches_finite_differences(self, mode, rng):
        h = 1e-6
        pts = rng.uniform(-2.8, 2.8, (40, 2))
        J = texcoord_jacobian(pts, mode)
        for p, Jp in zip(pts, J):
            for k in range(2):
                dp = np.zeros(2)
                dp[k] = h
                fd = (canonical_to_texcoord(p + dp, mode)
                      - canonical_to_texcoord(p - dp, mode)) / (2 * h)
                assert np.allclose(Jp[:, k], fd, atol=2e-9)


class TestSampleTexture:
    def test_single_texel_everywhere(self, rng):
        grid = TexelGrid(np.array([[[0.2, 0.3, 0.4]]]))
        for tc in rng.uniform(0, 1, (20, 2)):
            assert np.array_equal(sample_texture(grid, tc), [0.2, 0.3, 0.4])

    def test_midpoint_average(self):
        grid = TexelGrid(np.array([[[0.1, 0.2, 0.3]], [[0.5, 0.6, 0.7]]]))
        mid = sample_texture(grid, [0.5, 0.37])
        assert np.allclose(mid, [0.3, 0.4, 0.5], atol=1e-15)

    def test_matches_reference_implementation(self, rng):
        grid = TexelGrid(rng.uniform(-1, 1, (4, 4, 3)))
        for tc in rng.uniform(0, 1, (1000, 2)):
            assert np.array_equal(sample_texture(grid, tc), bilinear_reference(grid, tc))

    def test_batch_matches_scalar(self, rng):
        grid = TexelGrid(rng.uniform(-1, 1, (3, 2, 4)))
        tcs = rng.uniform(0, 1, (50, 2))
        batch = sample_texture(grid, tcs)
        for tc, row in zip(tcs, batch):
            assert np.array_equal(row, sample_texture(grid, tc))


class TestResampleTexture:
    def test_identity_dims_bitwise(self, rng):
        grid = TexelGrid(rng.uniform(-1, 1, (3, 5, 3)), growth_steps=2)
        out = resample_texture(grid, (3, 5))
        assert np.array_equal(out.texels, grid.texels)
        assert out.growth_steps == 2

    def test_constant_upsample_exact(self):
        grid = TexelGrid(np.full((1, 1, 3), 0.1))
        out = resample_texture(grid, (2, 2))
        assert np.array_equal(out.texels, np.full((2, 2, 3), 0.1))

    def test_matches_center_sampling_oracle(self, rng):
        grid = TexelGrid(rng.uniform(-1, 1, (2, 2, 3)))
        out = resample_texture(grid, (4, 4))
        for i in range(4):
            for j in range(4):
                tc = ((i + 0.5) / 4, (j + 0.5) / 4)
                assert np.array_equal(out.texels[i, j], bilinear_reference(grid, tc))

    def test_round_trip_constant_exact(self):
        grid = TexelGrid(np.full((2, 3, 3), 0.7))
        big = resample_texture(grid, (8, 8))
        back = resample_texture(big, (2, 3))
        assert np.array_equal(back.texels, grid.texels)

    def test_out_of_range_dims_rejected(self, rng):
        grid = TexelGrid(rng.uniform(-1, 1, (2, 2, 3)))
        with pytest.raises(InvalidDims):
            resample_texture(grid, (0, 2))
        with pytest.raises(InvalidDims):
            resample_texture(grid, (2, 9))


class TestInitTexture:
    def make(self, s_u, s_v, channels=3):
        g = SplatGeometry(mean=[0, 0, 1], rotation=[1, 0, 0, 0],
                          log_scale=np.log([s_u, s_v]), opacity_logit=0.0,
                          base_color=[0.5] * 3)
        return init_texture(g, channels)

    def test_aspect_follows_scales(self):
        assert self.make(2.0, 0.5).dims == (2, 1)
        assert self.make(0.5, 2.0).dims == (1, 2)

    def test_tie_break(self):
        assert self.make(1.0, 1.0).dims == (2, 1)

    def test_rgb_offsets_zero(self):
        assert np.array_equal(self.make(2.0, 0.5).texels, np.zeros((2, 1, 3)))

    def test_rgba_alpha_neutral(self):
        grid = self.make(2.0, 0.5, channels=4)
        assert np.array_equal(grid.texels[:, :, :3], np.zeros((2, 1, 3)))
        assert np.all(grid.texels[:, :, 3] == NEUTRAL_ALPHA_LOGIT)
        sig = 1.0 / (1.0 + np.exp(-NEUTRAL_ALPHA_LOGIT))
        assert abs(sig - (1.0 - EPS_ALPHA)) < 1e-15


class TestWarpDensity:
    def test_axis_uniform(self):
        assert verify_warp_density(WarpMode.AXIS, 100_000, seed=0) < 0.01

    def test_radial_uniform(self):
        assert verify_warp_density(WarpMode.RADIAL, 100_000, seed=0) < 0.01

    def test_identity_warp_negative_control(self):
        raw = np.random.default_rng(0).standard_normal(100_000)
        assert ks_uniform(raw) > 0.1

    def test_none_mode_rejected(self):
        with pytest.raises(ValueError):
            verify_warp_density(WarpMode.NONE, 100_000, seed=0)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            verify_warp_density(WarpMode.AXIS, 100, seed=0)
