import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobdiff.diffusion import (
    EdmConfig,
    VpSchedule,
    ddim_sample,
    ddim_sigma,
    ddim_step,
    denoised_from_eps,
    edm_coefficients,
    edm_loss,
    edm_precondition,
    eps_from_denoised,
    forward_diffuse,
    inverse_ddim,
    inverse_ddim_step,
    make_eps_fn,
    make_vp_schedule,
    ode_sample,
    sample_sigmas,
    sub_schedule,
    sigma_of_alpha_bar,
    vp_state_to_ve,
)
from mobdiff.errors import NumericError

EPS0 = lambda x, k: np.zeros_like(x)


class TestSchedule:
    def test_hand_product(self):
        s = make_vp_schedule(2, 0.1, 0.2)
        np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72], rtol=1e-15)

    def test_equal_bounds_rejected(self):
        with pytest.raises(ValueError):
            make_vp_schedule(10, 0.02, 0.02)

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            make_vp_schedule(1, 1e-4, 0.02)
        with pytest.raises(ValueError):
            make_vp_schedule(10, 0.0, 0.02)
        with pytest.raises(ValueError):
            make_vp_schedule(10, 0.5, 1.0)

    def test_monotonicity(self):
        s = make_vp_schedule(100)
        assert s.alpha_bar[-1] < s.alpha_bar[0]
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(np.diff(s.beta) > 0)

    def test_alpha_bar_at_boundary_convention(self):
        s = make_vp_schedule(10)
        assert s.alpha_bar_at(0) == 1.0
        assert s.alpha_bar_at(10) == s.alpha_bar[-1]
        with pytest.raises(ValueError):
            s.alpha_bar_at(11)

    def test_sub_schedule_selects_terminal(self):
        s = make_vp_schedule(500)
        sub = sub_schedule(s, 100)
        assert sub.n_steps == 100
        assert sub.alpha_bar[-1] == s.alpha_bar[-1]
        # product consistency: sub alpha_bar equals parent at strided levels
        np.testing.assert_allclose(sub.alpha_bar, s.alpha_bar[4::5], rtol=1e-15)

    def test_sub_schedule_requires_divisor(self):
        with pytest.raises(ValueError):
            sub_schedule(make_vp_schedule(500), 101)

    def test_json_roundtrip(self):
        s = make_vp_schedule(50)
        t = VpSchedule.from_json(s.to_json())
        np.testing.assert_allclose(t.alpha_bar, s.alpha_bar, rtol=1e-15)
        assert t.content_hash() == s.content_hash()


class TestForward:
    def test_zero_noise(self):
        s = make_vp_schedule(10)
        x0 = np.ones((4, 2))
        out = forward_diffuse(x0, 3, np.zeros_like(x0), s)
        np.testing.assert_allclose(out, math.sqrt(s.alpha_bar_at(3)) * x0)

    def test_k_zero_identity(self):
        s = make_vp_schedule(10)
        x0 = np.random.default_rng(0).standard_normal((4, 2))
        np.testing.assert_array_equal(forward_diffuse(x0, 0, np.zeros_like(x0), s), x0)

    def test_shape_mismatch(self):
        s = make_vp_schedule(10)
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros((3, 2)), 1, np.zeros((2, 2)), s)

    def test_marginal_moments_monte_carlo(self):
        # Monte-Carlo mean/std of the terminal marginal within 4 standard errors
        s = make_vp_schedule(100)
        rng = np.random.default_rng(1)
        x0 = np.full((1, 1), 0.5)
        n = 10_000
        draws = np.array(
            [forward_diffuse(x0, 100, rng.standard_normal((1, 1)), s)[0, 0] for n_ in range(n)]
        )
        a = s.alpha_bar_at(100)
        mean_se = math.sqrt(1 - a) / math.sqrt(n)
        assert abs(draws.mean() - math.sqrt(a) * 0.5) < 4 * mean_se
        var_se = (1 - a) * math.sqrt(2.0 / (n - 1))
        assert abs(draws.var() - (1 - a)) < 4 * var_se


class TestDdimStep:
    def test_true_noise_recovers_forward_path(self):
        s = make_vp_schedule(50)
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((3, 8, 2)) * 0.1
        z = rng.standard_normal(x0.shape)
        for k in (1, 10, 50):
            xk = forward_diffuse(x0, k, z, s)
            np.testing.assert_allclose(
                ddim_step(xk, z, k, s), forward_diffuse(x0, k - 1, z, s), atol=1e-10
            )

    def test_zero_inputs_zero_output(self):
        s = make_vp_schedule(10)
        np.testing.assert_array_equal(
            ddim_step(np.zeros((2, 2)), np.zeros((2, 2)), 5, s), np.zeros((2, 2))
        )

    def test_degenerate_step_alpha_equal(self):
        # when alpha_{k-1} == alpha_k the update is the identity for any eps
        beta = np.array([0.01, 0.02, 0.03])
        ab = np.cumprod(1 - beta)
        s = VpSchedule(beta, ab)
        x = np.random.default_rng(3).standard_normal((4, 2))
        eps = np.random.default_rng(4).standard_normal((4, 2))
        a_k = s.alpha_bar_at(2)
        x0_hat = (x - math.sqrt(1 - a_k) * eps) / math.sqrt(a_k)
        same = math.sqrt(a_k) * x0_hat + math.sqrt(1 - a_k) * eps
        np.testing.assert_allclose(same, x, atol=1e-12)

    def test_k_out_of_range(self):
        s = make_vp_schedule(10)
        with pytest.raises(ValueError):
            ddim_step(np.zeros((1, 2)), np.zeros((1, 2)), 0, s)
        with pytest.raises(ValueError):
            ddim_step(np.zeros((1, 2)), np.zeros((1, 2)), 11, s)

    def test_stochastic_step_variance(self):
        s = make_vp_schedule(50)
        rng = np.random.default_rng(5)
        sig = ddim_sigma(s, 20)
        outs = np.array(
            [
                ddim_step(np.zeros((1, 1)), np.zeros((1, 1)), 20, s, stochastic=True, rng=rng)[0, 0]
                for _ in range(20_000)
            ]
        )
        assert abs(outs.std() - sig) < 4 * sig / math.sqrt(2 * 20_000)

    def test_inverse_step_is_algebraic_inverse(self):
        s = make_vp_schedule(30)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 6, 2))
        eps = rng.standard_normal(x.shape)
        for k in (1, 15, 30):
            fwd_back = inverse_ddim_step(ddim_step(x, eps, k, s), eps, k, s)
            np.testing.assert_allclose(fwd_back, x, atol=1e-12)


class TestSamplers:
    def test_zero_denoiser_closed_form(self):
        # eps==0 telescopes: output = z / sqrt(alpha_bar_K)
        s = sub_schedule(make_vp_schedule(500), 50)
        z = np.random.default_rng(7).standard_normal((4, 8, 2))
        out = ddim_sample(EPS0, z, s)
        np.testing.assert_allclose(out, z / math.sqrt(s.alpha_bar[-1]), atol=1e-10)

    def test_determinism(self):
        s = sub_schedule(make_vp_schedule(500), 20)
        z = np.random.default_rng(8).standard_normal((2, 8, 2))
        fn = lambda x, k: 0.1 * x
        np.testing.assert_array_equal(ddim_sample(fn, z, s), ddim_sample(fn, z, s))

    def test_zero_denoiser_inverse_round_trip_exact(self):
        s = sub_schedule(make_vp_schedule(500), 25)
        rng = np.random.default_rng(9)
        x0 = rng.standard_normal((3, 8, 2)) * 0.1
        z = inverse_ddim(EPS0, x0, s)
        np.testing.assert_allclose(ddim_sample(EPS0, z, s), x0, atol=1e-10)

    def test_constant_eps_round_trip_exact_any_k(self):
        s500 = make_vp_schedule(500)
        rng = np.random.default_rng(10)
        const = rng.standard_normal((1, 8, 2))
        fn = lambda x, k: np.broadcast_to(const, x.shape)
        x0 = rng.standard_normal((5, 8, 2)) * 0.1
        for n_steps in (1, 4, 20):
            s = sub_schedule(s500, n_steps)
            np.testing.assert_allclose(
                ddim_sample(fn, inverse_ddim(fn, x0, s), s), x0, atol=1e-9
            )

    def test_single_step_inversion_algebraically_exact(self):
        s = sub_schedule(make_vp_schedule(500), 1)
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal((2, 4, 2)) * 0.1
        const = rng.standard_normal(x0.shape)
        fn = lambda x, k: const
        np.testing.assert_allclose(ddim_sample(fn, inverse_ddim(fn, x0, s), s), x0, atol=1e-12)

    def test_nonfinite_aborts_with_diagnostics(self):
        s = sub_schedule(make_vp_schedule(500), 5)
        bad = lambda x, k: np.full_like(x, np.nan)
        with pytest.raises(NumericError, match="step k="):
            ddim_sample(bad, np.zeros((1, 4, 2)), s)
        with pytest.raises(NumericError, match="step k="):
            inverse_ddim(bad, np.zeros((1, 4, 2)), s)

    def test_state_dependent_eps_round_trip_improves_with_steps(self):
        # first-order inversion error shrinks monotonically in step count
        s500 = make_vp_schedule(500)
        fn = lambda x, k: 0.3 * np.tanh(x)
        x0 = np.random.default_rng(12).standard_normal((4, 8, 2)) * 0.1
        errs = []
        for n_steps in (20, 50, 100):
            s = sub_schedule(s500, n_steps)
            err = np.abs(ddim_sample(fn, inverse_ddim(fn, x0, s), s) - x0).max()
            errs.append(err)
        assert errs[1] < errs[0] and errs[2] < errs[1]


class TestEdm:
    def test_coefficient_table_values(self):
        ci, cs, co, cn = edm_coefficients(0.1, 0.1)
        assert cs == pytest.approx(0.5)
        assert co == pytest.approx(0.1 / math.sqrt(2))
        assert ci == pytest.approx(1.0 / (0.1 * math.sqrt(2)))
        assert cn == pytest.approx(0.25 * math.log(0.1))

    def test_coefficients_match_independent_formulas(self):
        # independent recomputation from the closed forms
        rng = np.random.default_rng(13)
        sig = np.exp(rng.normal(-1.2, 1.2, 50))
        sd = 0.1
        ci, cs, co, cn = edm_coefficients(sig, sd)
        np.testing.assert_allclose(ci, (sig**2 + sd**2) ** -0.5, rtol=1e-14)
        np.testing.assert_allclose(cs, sd**2 / (sig**2 + sd**2), rtol=1e-14)
        np.testing.assert_allclose(co, sig * sd / np.sqrt(sig**2 + sd**2), rtol=1e-14)
        np.testing.assert_allclose(cn, np.log(sig) / 4, rtol=1e-14)

    def test_small_sigma_limit(self):
        ci, cs, co, cn = edm_coefficients(1e-9, 0.1)
        assert cs == pytest.approx(1.0, abs=1e-10)
        assert co == pytest.approx(0.0, abs=1e-9)

    def test_sigma_positive_required(self):
        with pytest.raises(ValueError):
            edm_coefficients(0.0, 0.1)
        with pytest.raises(ValueError):
            EdmConfig(sigma_data=0.0)

    def test_precondition_affine_in_net_output(self):
        cfg = EdmConfig()
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 8, 2))
        f_out = rng.standard_normal((3, 8, 2))
        d0 = edm_precondition(lambda xi, cn, cond: np.zeros_like(xi), x, 0.3, None, cfg)
        d1 = edm_precondition(lambda xi, cn, cond: f_out, x, 0.3, None, cfg)
        ci, cs, co, cn = edm_coefficients(0.3, cfg.sigma_data)
        np.testing.assert_allclose(d0, cs * x, rtol=1e-12)
        np.testing.assert_allclose(d1 - d0, co * f_out, rtol=1e-12)

    def test_oracle_denoiser_zero_loss(self):
        cfg = EdmConfig()
        x0 = np.random.default_rng(15).standard_normal((8, 4, 2)) * 0.1
        loss = edm_loss(lambda xn, sig: x0, x0, np.random.default_rng(0), cfg)
        assert loss == 0.0

    def test_zero_denoiser_expected_loss(self):
        # D == 0 -> per-sample loss ||x0||^2 exactly, independent of draws
        cfg = EdmConfig()
        x0 = np.random.default_rng(16).standard_normal((16, 4, 2)) * 0.1
        loss = edm_loss(lambda xn, sig: np.zeros_like(xn), x0, np.random.default_rng(1), cfg)
        assert loss == pytest.approx((x0**2).sum() / 16, rel=1e-12)

    def test_sigma_distribution_lognormal(self):
        cfg = EdmConfig()
        sig = sample_sigmas(np.random.default_rng(17), 200_000, cfg)
        logs = np.log(sig)
        assert abs(logs.mean() - cfg.p_mean) < 4 * cfg.p_std / math.sqrt(200_000)
        assert abs(logs.std() - cfg.p_std) < 0.02


class TestBridge:
    def test_exact_denoiser_gives_zero_eps(self):
        x = np.random.default_rng(18).standard_normal((4, 2))
        np.testing.assert_array_equal(eps_from_denoised(x, x, 0.7), 0.0)

    def test_known_noise_recovered(self):
        rng = np.random.default_rng(19)
        x = rng.standard_normal((4, 2))
        z = rng.standard_normal((4, 2))
        d = x - 0.7 * z
        np.testing.assert_allclose(eps_from_denoised(x, d, 0.7), z, rtol=1e-12)

    def test_round_trip_bridge(self):
        rng = np.random.default_rng(20)
        x = rng.standard_normal((4, 2))
        d = rng.standard_normal((4, 2))
        eps = eps_from_denoised(x, d, 0.33)
        np.testing.assert_allclose(denoised_from_eps(x, eps, 0.33), d, atol=1e-12)

    @given(st.floats(0.01, 0.999))
    @settings(max_examples=50, deadline=None)
    def test_sigma_alpha_consistency(self, a):
        sig = sigma_of_alpha_bar(a)
        assert sig >= 0
        # invert: alpha = 1 / (1 + sigma^2)
        assert a == pytest.approx(1.0 / (1.0 + sig**2), rel=1e-12)

    def test_make_eps_fn_matches_manual_bridge(self):
        s = make_vp_schedule(50)
        d_fn = lambda x_ve, sig: 0.5 * x_ve
        eps_fn = make_eps_fn(d_fn, s)
        x = np.random.default_rng(21).standard_normal((2, 4, 2))
        k = 30
        a = s.alpha_bar_at(k)
        sig = sigma_of_alpha_bar(a)
        x_ve = vp_state_to_ve(x, a)
        np.testing.assert_allclose(
            eps_fn(x, k), (x_ve - 0.5 * x_ve) / sig, rtol=1e-12
        )


class TestOdeSampler:
    def test_requires_decreasing_to_zero(self):
        with pytest.raises(ValueError):
            ode_sample(lambda x, s: x, np.zeros((1, 2)), np.array([1.0, 0.5, 0.1]))

    def test_linear_denoiser_matches_exact_solution(self):
        # D(x) = 0 gives dx/dsigma = x / sigma, so x(sigma) = x0 * sigma/sigma0
        sigmas = np.concatenate([np.geomspace(10.0, 1e-4, 300), [0.0]])
        x_init = np.random.default_rng(22).standard_normal((3, 2))
        out = ode_sample(lambda x, s: np.zeros_like(x), x_init, sigmas, heun=True)
        np.testing.assert_allclose(out, 0.0, atol=1e-3)

    def test_heun_beats_euler_on_curved_field(self):
        d_fn = lambda x, s: np.tanh(x)
        sigmas = np.concatenate([np.geomspace(5.0, 1e-3, 40), [0.0]])
        fine = np.concatenate([np.geomspace(5.0, 1e-3, 4000), [0.0]])
        x_init = np.random.default_rng(23).standard_normal((2, 2))
        ref = ode_sample(d_fn, x_init, fine, heun=True)
        err_euler = np.abs(ode_sample(d_fn, x_init, sigmas, heun=False) - ref).max()
        err_heun = np.abs(ode_sample(d_fn, x_init, sigmas, heun=True) - ref).max()
        assert err_heun < err_euler
