"""Joint-Gaussian model, marginal likelihood, MCMC fit, and conditioning."""

import math

import numpy as np
import pytest

from shapebo.gp import (
    Dataset,
    MCMCDiagnosticError,
    PriorConfig,
    condition,
    fit_hyperparams,
    fit_hyperparams_full,
    marginal_loglik,
    prior_joint,
)
from shapebo.kernel import DerivRequest, HyperParams, assemble_cov_matrix, se_cov


def theta_1d(mu=0.0, tau2=1.0, sigma2=0.1, psi=1.0):
    return HyperParams(mu, tau2, sigma2, np.array([psi]))


class TestPriorJoint:
    def test_single_function_coordinate(self):
        theta = theta_1d(mu=0.7, tau2=2.0)
        jg = prior_joint([np.array([0.2])], theta)
        np.testing.assert_allclose(jg.mean, [0.7])
        np.testing.assert_allclose(jg.cov, [[2.0]])

    def test_function_and_gradient_block(self):
        theta = theta_1d(mu=0.7, tau2=2.0, psi=0.5)
        p = np.array([0.2])
        jg = prior_joint([p, DerivRequest(p, 0, 1)], theta)
        np.testing.assert_allclose(jg.mean, [0.7, 0.0])
        np.testing.assert_allclose(jg.cov, [[2.0, 0.0], [0.0, 2 * 0.5 * 2.0]], atol=1e-14)

    def test_derivative_means_always_zero(self):
        rng = np.random.default_rng(0)
        theta = HyperParams(3.3, 1.0, 0.0, rng.uniform(0.5, 2, 2))
        layout = []
        for _ in range(6):
            p = rng.uniform(-1, 1, 2)
            layout.append(DerivRequest(p, int(rng.integers(2)), int(rng.integers(1, 3))))
        jg = prior_joint(layout, theta)
        np.testing.assert_array_equal(jg.mean, np.zeros(6))

    def test_empty_layout_rejected(self):
        with pytest.raises(ValueError):
            prior_joint([], theta_1d())


class TestMarginalLoglik:
    def test_single_observation_at_mean(self):
        mu, tau2, sigma2 = 0.4, 1.3, 0.2
        theta = theta_1d(mu, tau2, sigma2)
        data = Dataset(np.array([[0.0]]), np.array([mu]))
        want = -0.5 * math.log(2 * math.pi * (tau2 + sigma2))
        assert marginal_loglik(theta, data) == pytest.approx(want, rel=1e-6)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        theta = HyperParams(0.0, 1.0, 0.3, np.array([1.0, 2.0]))
        X = rng.uniform(-1, 1, (6, 2))
        y = rng.normal(size=6)
        base = marginal_loglik(theta, Dataset(X, y))
        perm = rng.permutation(6)
        assert marginal_loglik(theta, Dataset(X[perm], y[perm])) == pytest.approx(base, rel=1e-12)

    def test_two_point_density_vs_explicit_inverse(self):
        # Independent oracle: direct bivariate normal density with an explicit
        # 2x2 inverse, same jittered covariance the implementation factors.
        theta = theta_1d(mu=0.3, tau2=1.7, sigma2=0.25, psi=0.8)
        X = np.array([[0.1], [0.9]])
        y = np.array([0.5, -0.2])
        k01 = se_cov(X[0], X[1], theta)
        jit = 1e-8 * theta.signal_var_tau2
        a = theta.signal_var_tau2 + theta.noise_var_sigma2 + jit
        det = a * a - k01 * k01
        inv = np.array([[a, -k01], [-k01, a]]) / det
        r = y - theta.mean_mu
        want = -0.5 * (r @ inv @ r) - 0.5 * math.log(det) - math.log(2 * math.pi)
        assert marginal_loglik(theta, Dataset(X, y)) == pytest.approx(want, abs=1e-10)


class TestFitHyperparams:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(2)
        data = Dataset(rng.uniform(0, 1, (8, 1)), rng.normal(size=8))
        a = fit_hyperparams(data, chain_len=400, burn_in=100, seed=5)
        b = fit_hyperparams(data, chain_len=400, burn_in=100, seed=5)
        assert a.mean_mu == b.mean_mu
        assert a.signal_var_tau2 == b.signal_var_tau2
        np.testing.assert_array_equal(a.lengthscale_prec_psi, b.lengthscale_prec_psi)

    def test_invalid_chain_args(self):
        data = Dataset(np.array([[0.0]]), np.array([1.0]))
        with pytest.raises(ValueError):
            fit_hyperparams(data, chain_len=0)
        with pytest.raises(ValueError):
            fit_hyperparams(data, chain_len=100, burn_in=100)

    def test_single_observation_sigma2_tracks_prior(self):
        # With one data point the noise variance is barely identified, so its
        # posterior median should sit near the half-Cauchy(0.25) median.
        data = Dataset(np.array([[0.5]]), np.array([0.1]))
        theta = fit_hyperparams(data, chain_len=20000, burn_in=5000, seed=3)
        assert 0.1 <= theta.noise_var_sigma2 <= 0.6

    def test_lengthscale_recovery_on_simulated_gp(self):
        # d=1, n=30, true psi=5: the median estimate should land within a
        # factor of three of the truth for most seeds.
        true = HyperParams(0.0, 1.0, 0.01, np.array([5.0]))
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            X = rng.uniform(0, 1, (30, 1))
            K = assemble_cov_matrix(list(X), list(X), true)
            y = rng.multivariate_normal(np.zeros(30), K + 0.01 * np.eye(30))
            theta = fit_hyperparams(
                Dataset(X, y), chain_len=3000, burn_in=1000, seed=seed, box=[[0.0, 1.0]]
            )
            psi = theta.lengthscale_prec_psi[0]
            hits += 5.0 / 3.0 <= psi <= 15.0
        assert hits >= 8

    def test_acceptance_rate_within_band(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(1, 120, (20, 1))
        y = 0.1 + 0.0008 * X[:, 0] + 0.05 * rng.standard_normal(20)
        res = fit_hyperparams_full(
            Dataset(X, y), chain_len=4000, burn_in=1000, seed=0, box=[[1.0, 120.0]]
        )
        assert 0.1 <= res.acceptance_rate <= 0.6

    def test_all_rejected_chain_raises_diagnostic(self):
        class BadPrior(PriorConfig):
            pass

        data = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
        # A chain of length 2 after burn-in essentially never accepts when the
        # proposal scale is enormous; emulate by monkeypatching the RNG is
        # heavier than just trying many short chains until one rejects all.
        raised = False
        for seed in range(200):
            try:
                res = fit_hyperparams_full(data, chain_len=3, burn_in=1, seed=seed)
            except MCMCDiagnosticError:
                raised = True
                break
        assert raised


class TestCondition:
    def test_noiseless_interpolation(self):
        theta = theta_1d(mu=0.2, tau2=2.0, sigma2=0.0)
        p = np.array([0.3])
        prior = prior_joint([p, p], theta)
        post = condition(prior, [0], [1.5], 0.0)
        assert post.mean[0] == pytest.approx(1.5, abs=1e-6)
        assert post.cov[0, 0] <= 1e-8 * theta.signal_var_tau2 * 1.001

    def test_far_point_reverts_to_prior(self):
        theta = theta_1d(mu=0.2, tau2=2.0, sigma2=0.1, psi=1.0)
        prior = prior_joint([np.array([0.0]), np.array([40.0])], theta)
        post = condition(prior, [0], [1.0], theta.noise_var_sigma2)
        assert post.mean[0] == pytest.approx(0.2, abs=1e-6)
        assert post.cov[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_scalar_conjugate_formula(self):
        mu, tau2, sigma2, y = 0.3, 1.4, 0.5, 2.0
        theta = theta_1d(mu, tau2, sigma2)
        p = np.array([0.8])
        prior = prior_joint([p, p], theta)
        post = condition(prior, [0], [y], sigma2)
        want = mu + tau2 / (tau2 + sigma2) * (y - mu)
        assert post.mean[0] == pytest.approx(want, rel=1e-6)

    def test_empty_observation_returns_prior(self):
        theta = theta_1d()
        layout = [np.array([0.1]), DerivRequest(np.array([0.4]), 0, 1)]
        prior = prior_joint(layout, theta)
        post = condition(prior, [], [], 0.1)
        np.testing.assert_allclose(post.mean, prior.mean, atol=1e-12)
        np.testing.assert_allclose(post.cov, prior.cov, atol=1e-12)

    def test_conditioning_never_inflates_variance(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            d = int(rng.integers(1, 3))
            theta = HyperParams(0.0, 1.0, 0.2, rng.uniform(0.5, 3, d))
            pts = rng.uniform(-1, 1, (6, d))
            layout = list(pts) + [DerivRequest(pts[0], 0, 1)]
            prior = prior_joint(layout, theta)
            obs = [0, 1, 2]
            post = condition(prior, obs, rng.normal(size=3), theta.noise_var_sigma2)
            keep = [3, 4, 5, 6]
            for a, i in enumerate(keep):
                assert post.cov[a, a] <= prior.cov[i, i] + 1e-10

    def test_derivative_coordinate_not_observable(self):
        theta = theta_1d()
        layout = [np.array([0.1]), DerivRequest(np.array([0.4]), 0, 1)]
        prior = prior_joint(layout, theta)
        with pytest.raises(ValueError):
            condition(prior, [1], [0.0], 0.1)
