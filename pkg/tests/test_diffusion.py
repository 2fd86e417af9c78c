import numpy as np
import pytest

from trafficdiff.diffusion import (analytic_gaussian_denoiser, ddpm_loss,
                                   forward_sample, guided_step, make_schedule,
                                   posterior_step, sample_loop)
from trafficdiff.errors import (EmptyCandidates, InvalidScheduleParams,
                                ShapeMismatch)


class TestMakeSchedule:
    def test_single_step(self):
        s = make_schedule(1, 0.5, 0.5)
        assert np.allclose(s.alpha_bar, [0.5])
        assert np.allclose(s.sigma2, [0.5])

    def test_two_step_posterior_variance(self):
        s = make_schedule(2, 0.1, 0.2)
        assert np.allclose(s.alpha_bar, [0.9, 0.72])
        assert s.sigma2[1] == pytest.approx(0.2 * (1 - 0.9) / (1 - 0.72))
        assert s.sigma2[0] == pytest.approx(0.1)

    def test_alpha_bar_strictly_decreasing(self):
        s = make_schedule(100, 1e-4, 0.05)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert s.alpha_bar[0] > 0.99
        assert np.all(np.diff(s.beta) > 0)

    @pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, 0.0, 0.2),
                                      (10, 0.3, 0.2), (10, 0.1, 1.0)])
    def test_invalid_params(self, args):
        with pytest.raises(InvalidScheduleParams):
            make_schedule(*args)


class TestForwardSample:
    def test_near_identity_at_t1(self):
        s = make_schedule(100, 1e-4, 0.05)
        x0 = np.array([1.0, -2.0])
        out = forward_sample(x0, 1, np.zeros(2), s)
        assert np.allclose(out, x0 * np.sqrt(1 - 1e-4))

    def test_scalar_arithmetic(self):
        s = make_schedule(2, 0.1, 0.75)  # alpha_bar[1] = 0.9*0.25 = 0.225
        s2 = make_schedule(1, 0.75, 0.75)  # alpha_bar = [0.25]
        out = forward_sample(np.array(2.0), 1, np.array(1.0), s2)
        assert out == pytest.approx(0.5 * 2 + np.sqrt(0.75))

    def test_deterministic_with_zero_eps(self):
        s = make_schedule(10, 0.01, 0.2)
        x0 = np.arange(6.0).reshape(2, 3)
        out = forward_sample(x0, 7, np.zeros_like(x0), s)
        assert np.allclose(out, np.sqrt(s.alpha_bar[6]) * x0)

    def test_shape_mismatch(self):
        s = make_schedule(10, 0.01, 0.2)
        with pytest.raises(ShapeMismatch):
            forward_sample(np.zeros(3), 1, np.zeros(4), s)

    def test_marginal_matches_composed_kernels(self):
        # compose per-step kernels and compare moments to the closed form
        s = make_schedule(10, 0.02, 0.3)
        rng = np.random.default_rng(0)
        n = 100_000
        x = np.full(n, 1.7)
        for t in range(1, 11):
            x = np.sqrt(1 - s.beta[t - 1]) * x \
                + np.sqrt(s.beta[t - 1]) * rng.standard_normal(n)
        want_mean = np.sqrt(s.alpha_bar[-1]) * 1.7
        want_var = 1 - s.alpha_bar[-1]
        se_mean = np.sqrt(want_var / n)
        assert abs(x.mean() - want_mean) < 3 * se_mean
        se_var = want_var * np.sqrt(2.0 / n)
        assert abs(x.var() - want_var) < 3 * se_var


class TestPosteriorStep:
    def test_identity_in_zero_beta_limit(self):
        s = make_schedule(2, 1e-12, 1e-12)
        x = np.array([0.3, -0.7])
        out = posterior_step(x, np.zeros(2), 2, s, np.zeros(2))
        assert np.allclose(out, x, atol=1e-9)

    def test_t1_is_deterministic(self):
        s = make_schedule(5, 0.01, 0.2)
        x = np.array([1.0])
        a = posterior_step(x, np.array([0.5]), 1, s, np.array([100.0]))
        b = posterior_step(x, np.array([0.5]), 1, s, np.array([-100.0]))
        assert np.allclose(a, b)

    def test_scalar_mean_formula(self):
        s = make_schedule(2, 0.1, 0.2)  # t=2: beta 0.2, alpha_bar 0.72
        out = posterior_step(np.array(1.0), np.array(1.0), 2, s, np.array(0.0))
        want = (1 - 0.2 / np.sqrt(1 - 0.72)) / np.sqrt(0.8)
        assert out == pytest.approx(want)
        assert out == pytest.approx(0.6955, abs=1e-4)


class TestDdpmLoss:
    def test_zero_for_equal(self):
        assert ddpm_loss(np.ones(4), np.ones(4)) == 0.0

    def test_unit_error(self):
        assert ddpm_loss(np.array([1.0, 1.0]), np.zeros(2)) == 1.0

    def test_mean_over_elements(self):
        assert ddpm_loss(np.array([1.0, -1.0, 2.0]), np.zeros(3)) == pytest.approx(2.0)


class TestSampleLoop:
    def test_bit_reproducible(self):
        s = make_schedule(20, 1e-3, 0.1)
        den = lambda x, t: np.zeros_like(x)
        a = sample_loop(den, (4, 3), s, np.random.default_rng(42))
        b = sample_loop(den, (4, 3), s, np.random.default_rng(42))
        assert a.tobytes() == b.tobytes()

    def test_identity_guidance_is_noop(self):
        s = make_schedule(20, 1e-3, 0.1)
        den = lambda x, t: 0.1 * x
        a = sample_loop(den, (5,), s, np.random.default_rng(7))
        b = sample_loop(den, (5,), s, np.random.default_rng(7),
                        guidance=lambda x, t: x)
        assert a.tobytes() == b.tobytes()

    def test_recovers_scalar_gaussian(self):
        # the analytic denoiser is the exact posterior oracle
        s = make_schedule(100, 1e-4, 0.15)
        den = analytic_gaussian_denoiser(3.0, 4.0, s)
        rng = np.random.default_rng(11)
        xs = np.array([sample_loop(den, (), s, rng) for _ in range(1000)])
        assert abs(xs.mean() - 3.0) < 3 * np.sqrt(4.0 / 1000)
        assert abs(xs.var() - 4.0) < 0.6

    def test_recovers_diagonal_gaussian_8d(self):
        s = make_schedule(100, 1e-4, 0.15)
        mu = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 0.5, -0.5])
        s2 = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 1.5, 0.75, 3.0])
        den = analytic_gaussian_denoiser(mu, s2, s)
        rng = np.random.default_rng(12)
        xs = np.stack([sample_loop(den, (8,), s, rng) for _ in range(1000)])
        assert np.all(np.abs(xs.mean(0) - mu) < 3 * np.sqrt(s2 / 1000))
        assert np.all(np.abs(xs.var(0) - s2) < 0.15 * s2 + 3 * s2 * np.sqrt(2 / 1000))


class TestAnalyticDenoiser:
    def test_standard_normal_target(self):
        s = make_schedule(10, 0.01, 0.3)
        den = analytic_gaussian_denoiser(0.0, 1.0, s)
        x = np.array([0.7, -1.2])
        for t in (1, 5, 10):
            ab = s.alpha_bar[t - 1]
            assert np.allclose(den(x, t), np.sqrt(1 - ab) * x)

    def test_zero_at_the_mode(self):
        s = make_schedule(10, 0.01, 0.3)
        den = analytic_gaussian_denoiser(2.0, 0.5, s)
        for t in (1, 4, 10):
            x = np.sqrt(s.alpha_bar[t - 1]) * 2.0
            assert den(np.array(x), t) == pytest.approx(0.0, abs=1e-12)

    def test_pure_noise_limit(self):
        s = make_schedule(200, 1e-4, 0.3)
        den = analytic_gaussian_denoiser(5.0, 2.0, s)
        x = np.array([1.3])
        assert den(x, 200) == pytest.approx(x, abs=1e-3)


class TestGuidedStep:
    def test_exact_candidate_unchanged(self):
        c = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = guided_step(np.array([3.0, 4.0]), c, 0.8)
        assert np.allclose(out, [3.0, 4.0])

    def test_zero_strength_identity(self):
        c = np.array([[0.0, 0.0]])
        x = np.array([5.0, -1.0])
        assert np.allclose(guided_step(x, c, 0.0), x)

    def test_tie_breaks_to_lowest_index(self):
        out = guided_step(np.array([2.0, 0.0]),
                          np.array([[0.0, 0.0], [4.0, 0.0]]), 0.5)
        assert np.allclose(out, [1.0, 0.0])

    def test_never_increases_distance(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=6)
            c = rng.normal(size=(5, 6))
            s = rng.uniform(0.0, 1.0)
            before = np.linalg.norm(c - x, axis=1).min()
            out = guided_step(x, c, s)
            after = np.linalg.norm(c - out, axis=1).min()
            assert after <= before + 1e-12

    def test_empty_candidates(self):
        with pytest.raises(EmptyCandidates):
            guided_step(np.zeros(2), np.zeros((0, 2)), 0.5)
