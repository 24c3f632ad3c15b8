"""Truncated multivariate normal sampler against closed forms and oracles."""

import numpy as np
import pytest

from shapebo.tmvn import InfeasibleBoxError, _gibbs_sample, sample_tmvn


def test_half_normal_mean():
    s = sample_tmvn([0.0], [[1.0]], [0.0], [np.inf], 100_000, seed=1)
    assert abs(float(s.mean()) - np.sqrt(2.0 / np.pi)) < 0.01


def test_no_truncation_matches_gaussian_moments():
    mean = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    s = sample_tmvn(mean, cov, [-np.inf] * 2, [np.inf] * 2, 50_000, seed=2)
    np.testing.assert_allclose(s.mean(axis=0), mean, atol=0.03)
    np.testing.assert_allclose(np.cov(s.T), cov, atol=0.05)


def test_every_draw_inside_box():
    rng = np.random.default_rng(0)
    for trial in range(5):
        m = int(rng.integers(1, 6))
        A = rng.standard_normal((m, m))
        cov = A @ A.T + 0.5 * np.eye(m)
        lower = rng.uniform(-2, 0, m)
        upper = lower + rng.uniform(0.5, 3, m)
        s = sample_tmvn(rng.uniform(-1, 1, m), cov, lower, upper, 2000, seed=trial)
        assert np.all(s >= lower) and np.all(s <= upper)


def _naive_orthant_reference(cov, n_draws, seed):
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal(np.zeros(2), cov, size=n_draws)
    return z[(z[:, 0] >= 0) & (z[:, 1] >= 0)]


def test_2d_orthant_matches_naive_rejection():
    # Correlation 0.5 positive orthant; tolerance three combined MC standard
    # errors at 1e5 kept draws on each side.
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    n = 100_000
    s = sample_tmvn([0.0, 0.0], cov, [0.0, 0.0], [np.inf, np.inf], n, seed=3)
    ref = _naive_orthant_reference(cov, 320_000, seed=4)
    for j in range(2):
        se = np.sqrt(s[:, j].var() / n + ref[:, j].var() / len(ref))
        assert abs(s[:, j].mean() - ref[:, j].mean()) < 3 * se
    for a in range(2):
        for b in range(2):
            prod_s = s[:, a] * s[:, b]
            prod_r = ref[:, a] * ref[:, b]
            se = np.sqrt(prod_s.var() / n + prod_r.var() / len(ref))
            cov_s = prod_s.mean() - s[:, a].mean() * s[:, b].mean()
            cov_r = prod_r.mean() - ref[:, a].mean() * ref[:, b].mean()
            assert abs(cov_s - cov_r) < 3 * se


def test_deterministic_given_seed():
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    a = sample_tmvn([0.0, 0.0], cov, [0.0, -1.0], [2.0, np.inf], 500, seed=11)
    b = sample_tmvn([0.0, 0.0], cov, [0.0, -1.0], [2.0, np.inf], 500, seed=11)
    np.testing.assert_array_equal(a, b)


def test_infeasible_box_names_tightest_coordinate():
    with pytest.raises(InfeasibleBoxError) as exc:
        sample_tmvn([0.0, 0.0], np.eye(2), [0.0, 40.0], [1.0, 41.0], 10, seed=0)
    assert exc.value.tightest_coord == 1


def test_invalid_bounds_rejected():
    with pytest.raises(ValueError):
        sample_tmvn([0.0], [[1.0]], [1.0], [1.0], 5)


def test_gibbs_sampler_statistical_agreement():
    # The fallback path must target the same law as naive rejection.
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    rng = np.random.default_rng(5)
    g = _gibbs_sample(rng, np.zeros(2), cov, np.zeros(2), np.full(2, np.inf), 30_000)
    ref = _naive_orthant_reference(cov, 320_000, seed=6)
    assert np.all(g >= 0)
    np.testing.assert_allclose(g.mean(axis=0), ref.mean(axis=0), atol=0.02)
    np.testing.assert_allclose(np.cov(g.T), np.cov(ref.T), atol=0.03)


def test_high_dimensional_orthant_feasible():
    m = 60
    cov = 0.7 * np.ones((m, m)) + 0.3 * np.eye(m)
    s = sample_tmvn(np.zeros(m), cov, np.zeros(m), np.full(m, np.inf), 300, seed=7)
    assert s.shape == (300, m)
    assert np.all(s >= 0)
