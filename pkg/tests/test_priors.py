import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from facetviz.priors import (JitterConfig, RegularizerConfig, alpha_norm, alpha_norm_grad, blur_sigma_at,
                             jitter_offset, tv_denoise, tv_norm, tv_objective)
from oracles import central_fd, noisy_step, rel_err, tv_loops, tv_objective_loops, tv_oracle


class TestTVNorm:
    def test_constant(self):
        assert tv_norm(np.full((5, 4, 3), 0.7)) == 0.0

    def test_single_difference(self):
        assert tv_norm(np.array([[[0.0], [3.0]]])) == pytest.approx(3.0)

    def test_matches_loops(self, rng):
        img = rng.normal(size=(6, 6, 3)).astype(np.float32)
        assert tv_norm(img) == pytest.approx(tv_loops(img), abs=1e-6)

    def test_isotropic_corner(self):
        img = np.array([[0.0, 3.0], [4.0, 0.0]])[..., None]
        # only the top-left pixel has both differences: sqrt(3^2 + 4^2) plus two single ones
        assert tv_norm(img) == pytest.approx(5.0 + 3.0 + 4.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_and_shift_invariant(self, seed):
        img = np.random.default_rng(seed).normal(size=(4, 5, 2))
        assert tv_norm(img) >= 0
        assert tv_norm(img + 3.0) == pytest.approx(tv_norm(img), rel=1e-5)


class TestTVDenoise:
    def test_constant_unchanged(self):
        img = np.full((6, 6, 2), -0.3)
        for lam in (0.01, 1.0, 100.0):
            np.testing.assert_allclose(tv_denoise(img, lam), img, atol=1e-5)

    def test_large_lambda_pins_input(self, rng):
        img = rng.normal(0, 0.2, size=(10, 10, 3))
        assert np.abs(tv_denoise(img, 1000.0) - img).max() < 1e-2

    def test_step_image_near_oracle(self, rng):
        f = noisy_step(rng)
        ours = tv_objective(tv_denoise(f, 2.0, 100), f, 2.0)
        best = tv_objective_loops(tv_oracle(f, 2.0), f, 2.0)
        assert ours <= 1.02 * best

    def test_objective_matches_loops(self, rng):
        u, f = rng.normal(size=(5, 5, 2)), rng.normal(size=(5, 5, 2))
        assert tv_objective(u, f, 0.7) == pytest.approx(tv_objective_loops(u, f, 0.7), rel=1e-9)

    def test_reduces_tv(self, rng):
        img = rng.normal(size=(12, 12, 3)).astype(np.float32)
        assert tv_norm(tv_denoise(img, 1.0)) < tv_norm(img)

    def test_lambda_orders_fidelity(self, rng):
        img = noisy_step(rng, size=12, channels=2, noise=0.3)
        dist = [np.abs(tv_denoise(img, lam) - img).sum() for lam in (0.5, 5.0, 50.0)]
        assert dist[0] > dist[1] > dist[2]

    def test_deterministic(self, rng):
        img = rng.normal(size=(9, 9, 3))
        assert tv_denoise(img, 3.0).tobytes() == tv_denoise(img, 3.0).tobytes()

    @pytest.mark.parametrize("lam,iters", [(0, 10), (-1, 10), (1, 0)])
    def test_preconditions(self, lam, iters):
        with pytest.raises(ValueError):
            tv_denoise(np.zeros((3, 3, 1)), lam, iters)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 200))
    def test_never_worse_than_input(self, seed, lam):
        f = np.random.default_rng(seed).normal(size=(6, 7, 1)).astype(np.float32)
        u = tv_denoise(f, lam, 20)
        assert tv_objective(u, f, lam) <= tv_objective(f, f, lam) + 1e-6


class TestAlphaNorm:
    def test_zero_at_center(self):
        g = alpha_norm_grad(np.full((3, 3, 3), 0.2), 6, 1.0, center=0.2)
        assert not g.any()

    def test_quadratic_form(self, rng):
        x = rng.normal(size=(4, 5, 3)).astype(np.float32)
        g = alpha_norm_grad(x, 2, 0.7, center=0.1)
        np.testing.assert_allclose(g, 2 * 0.7 * (x.astype(np.float64) - 0.1) / x.size, rtol=1e-5)

    @pytest.mark.parametrize("alpha", [1.5, 3.0, 6.0])
    def test_finite_differences(self, rng, alpha):
        x = rng.normal(size=(4, 4, 3)).astype(np.float32)
        fd = central_fd(lambda v: alpha_norm(v, alpha, 2.0, -0.1), x)
        assert rel_err(alpha_norm_grad(x, alpha, 2.0, -0.1), fd) < 1e-3

    def test_alpha_below_one(self):
        with pytest.raises(ValueError):
            alpha_norm_grad(np.zeros((2, 2, 1)), 0.5, 1.0)


class TestJitter:
    def test_no_slack(self):
        cfg = JitterConfig(8, 8, 8, 8)
        r = np.random.default_rng(0)
        assert all(jitter_offset(cfg, r) == (0, 0) for _ in range(50))

    def test_zero_box_centered(self):
        cfg = JitterConfig(13, 11, 8, 8, center_box=0)
        r = np.random.default_rng(0)
        assert {jitter_offset(cfg, r) for _ in range(100)} == {(2, 1)}

    def test_uniform(self):
        cfg = JitterConfig(12, 12, 8, 8)
        r = np.random.default_rng(7)
        counts = np.zeros((5, 5))
        for _ in range(10_000):
            counts[jitter_offset(cfg, r)] += 1
        assert chisquare(counts.reshape(-1)).pvalue > 0.01

    def test_box_limits_centers(self):
        cfg = JitterConfig(20, 20, 8, 8, center_box=2)
        r = np.random.default_rng(1)
        offs = np.array([jitter_offset(cfg, r) for _ in range(500)])
        assert offs.min() == 4 and offs.max() == 8

    def test_window_must_fit(self):
        with pytest.raises(ValueError):
            JitterConfig(6, 6, 8, 8)


class TestBlurSchedule:
    cfg = RegularizerConfig(blur_sigma_start=2.0, blur_sigma_end=0.5, blur_every=1)

    def test_endpoints(self):
        assert blur_sigma_at(self.cfg, 0, 11) == 2.0
        assert blur_sigma_at(self.cfg, 10, 11) == 0.5

    def test_midpoint(self):
        assert blur_sigma_at(self.cfg, 5, 11) == pytest.approx(1.25, abs=1e-6)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            blur_sigma_at(self.cfg, 11, 11)


class TestRegularizerConfig:
    def test_defaults_disable_everything(self):
        cfg = RegularizerConfig()
        assert cfg.tv_lambda == 0 and cfg.blur_every == 0 and cfg.alpha_weight == 0 and cfg.jitter is None

    @pytest.mark.parametrize("kw", [dict(tv_lambda=-1), dict(tv_lambda=1, tv_inner_iters=0),
                                    dict(blur_sigma_start=0.5, blur_sigma_end=1.0), dict(alpha=0.5),
                                    dict(alpha_weight=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RegularizerConfig(**kw)
