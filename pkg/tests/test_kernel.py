"""Kernel and derivative cross-covariance checks against independent oracles."""

import math

import mpmath as mp
import numpy as np
import pytest

from shapebo.kernel import (
    DerivRequest,
    HyperParams,
    UnsupportedOrderError,
    assemble_cov_matrix,
    se_cov,
    se_cov_deriv,
)

mp.mp.dps = 50

FD_STEP = 1e-4


def _se_cov_mp(x, x2, tau2, psi):
    s = mp.mpf(0)
    for xi, x2i, pi in zip(x, x2, psi):
        s += mp.mpf(pi) * (mp.mpf(xi) - mp.mpf(x2i)) ** 2
    return mp.mpf(tau2) * mp.exp(-s)


def fd_cov_deriv(x, x2, j, o, k, o2, tau2, psi, h=FD_STEP):
    """Central finite differences of the SE kernel in extended precision.

    Order-2 differences in both arguments cancel ~16 digits, far beyond what
    float64 can carry at step 1e-4, so the stencil is evaluated with mpmath.
    """
    h = mp.mpf(h)

    def at(dx, dx2):
        xs = list(map(mp.mpf, x))
        x2s = list(map(mp.mpf, x2))
        xs[j] += dx
        x2s[k] += dx2
        return _se_cov_mp(xs, x2s, tau2, psi)

    def diff_left(dx2):
        if o == 0:
            return at(mp.mpf(0), dx2)
        if o == 1:
            return (at(h, dx2) - at(-h, dx2)) / (2 * h)
        return (at(h, dx2) - 2 * at(mp.mpf(0), dx2) + at(-h, dx2)) / h**2

    if o2 == 0:
        val = diff_left(mp.mpf(0))
    elif o2 == 1:
        val = (diff_left(h) - diff_left(-h)) / (2 * h)
    else:
        val = (diff_left(h) - 2 * diff_left(mp.mpf(0)) + diff_left(-h)) / h**2
    return float(val)


def test_se_cov_at_equal_points_is_tau2():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = rng.integers(1, 4)
        theta = HyperParams(0.0, 2.5, 0.1, rng.uniform(0.5, 2.0, d))
        x = rng.uniform(-2, 2, d)
        assert se_cov(x, x, theta) == pytest.approx(2.5, abs=0)


def test_se_cov_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.5, 3.0), 0.0, rng.uniform(0.2, 2.0, d))
        x, x2 = rng.uniform(-2, 2, d), rng.uniform(-2, 2, d)
        assert se_cov(x, x2, theta) == pytest.approx(se_cov(x2, x, theta), rel=1e-15)


def test_se_cov_closed_form_1d():
    theta = HyperParams(0.0, 1.0, 0.0, np.array([1.0]))
    assert se_cov([0.0], [1.0], theta) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_se_cov_stationary():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.5, 3.0), 0.0, rng.uniform(0.2, 2.0, d))
        x, x2, s = rng.uniform(-2, 2, d), rng.uniform(-2, 2, d), rng.uniform(-5, 5, d)
        assert se_cov(x + s, x2 + s, theta) == pytest.approx(se_cov(x, x2, theta), abs=1e-12)


def test_se_cov_dimension_mismatch():
    theta = HyperParams(0.0, 1.0, 0.0, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        se_cov([0.0], [0.0, 1.0], theta)


def test_deriv_odd_order_vanishes_at_zero_separation():
    theta = HyperParams(0.0, 1.7, 0.0, np.array([0.8]))
    x = np.array([0.3])
    assert se_cov_deriv(x, x, (0, 1), None, theta) == pytest.approx(0.0, abs=1e-15)


def test_deriv_grad_grad_at_zero_separation():
    tau2, psi = 1.7, 0.8
    theta = HyperParams(0.0, tau2, 0.0, np.array([psi]))
    x = np.array([0.3])
    got = se_cov_deriv(x, x, (0, 1), (0, 1), theta)
    assert got == pytest.approx(2.0 * psi * tau2, rel=1e-12)


def test_deriv_hess_hess_at_zero_separation():
    tau2, psi = 0.9, 1.3
    theta = HyperParams(0.0, tau2, 0.0, np.array([psi]))
    x = np.array([-0.2])
    got = se_cov_deriv(x, x, (0, 2), (0, 2), theta)
    assert got == pytest.approx(12.0 * psi**2 * tau2, rel=1e-12)


def test_deriv_order_above_two_rejected():
    theta = HyperParams(0.0, 1.0, 0.0, np.array([1.0]))
    with pytest.raises(UnsupportedOrderError):
        se_cov_deriv([0.0], [0.5], (0, 3), None, theta)
    with pytest.raises(UnsupportedOrderError):
        DerivRequest(np.array([0.0]), 0, 3)


def test_deriv_matches_finite_differences():
    # All order pairs up to (2,2), random dims/points, relative tol 1e-5.
    rng = np.random.default_rng(42)
    configs = 0
    while configs < 200:
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.3, 3.0), 0.0, rng.uniform(0.3, 2.0, d))
        x = rng.uniform(-2, 2, d)
        x2 = rng.uniform(-2, 2, d)
        j, k = int(rng.integers(d)), int(rng.integers(d))
        o, o2 = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        left = (j, o) if o else None
        right = (k, o2) if o2 else None
        got = se_cov_deriv(x, x2, left, right, theta)
        want = fd_cov_deriv(x, x2, j, o, k, o2, theta.signal_var_tau2, theta.lengthscale_prec_psi)
        scale = max(abs(want), 1e-8)
        assert abs(got - want) / scale < 1e-5, (d, j, k, o, o2, got, want)
        configs += 1


def test_assemble_single_point():
    theta = HyperParams(0.0, 2.2, 0.0, np.array([1.0]))
    p = np.array([0.4])
    m = assemble_cov_matrix([p], [p], theta)
    assert m.shape == (1, 1)
    assert m[0, 0] == pytest.approx(2.2)


def test_assemble_point_and_gradient_block():
    tau2, psi = 1.5, 0.7
    theta = HyperParams(0.0, tau2, 0.0, np.array([psi]))
    p = np.array([0.1])
    entries = [p, DerivRequest(p, 0, 1)]
    m = assemble_cov_matrix(entries, entries, theta)
    want = np.array([[tau2, 0.0], [0.0, 2.0 * psi * tau2]])
    np.testing.assert_allclose(m, want, rtol=1e-12, atol=1e-12)


def test_assemble_matches_scalar_entries():
    rng = np.random.default_rng(7)
    for _ in range(10):
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.5, 2.0), 0.0, rng.uniform(0.3, 2.0, d))
        entries = []
        for _ in range(6):
            p = rng.uniform(-2, 2, d)
            if rng.random() < 0.5:
                entries.append(p)
            else:
                entries.append(DerivRequest(p, int(rng.integers(d)), int(rng.integers(1, 3))))
        m = assemble_cov_matrix(entries, entries, theta)
        for a, ea in enumerate(entries):
            for b, eb in enumerate(entries):
                xa = ea.point if isinstance(ea, DerivRequest) else ea
                xb = eb.point if isinstance(eb, DerivRequest) else eb
                la = ea if isinstance(ea, DerivRequest) else None
                rb = eb if isinstance(eb, DerivRequest) else None
                want = se_cov_deriv(xa, xb, la, rb, theta)
                assert m[a, b] == pytest.approx(want, rel=1e-10, abs=1e-12), (a, b)


def test_assemble_duplicate_point_symmetric_rank_deficient():
    theta = HyperParams(0.0, 1.0, 0.0, np.array([1.0]))
    p = np.array([0.5])
    m = assemble_cov_matrix([p, p], [p, p], theta)
    np.testing.assert_allclose(m, m.T)
    assert np.linalg.matrix_rank(m) == 1


def test_assemble_jittered_cholesky_succeeds():
    # Distinct entries, d in {1,2,3}, 100 random sets.
    rng = np.random.default_rng(11)
    for trial in range(100):
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.3, 3.0), 0.0, rng.uniform(0.3, 3.0, d))
        n = int(rng.integers(2, 9))
        pts = rng.uniform(-2, 2, (n, d))
        entries = []
        for i in range(n):
            r = rng.random()
            if r < 0.4:
                entries.append(pts[i])
            else:
                entries.append(DerivRequest(pts[i], int(rng.integers(d)), int(rng.integers(1, 3))))
        m = assemble_cov_matrix(entries, entries, theta)
        np.testing.assert_allclose(m, m.T, rtol=0, atol=1e-12)
        np.linalg.cholesky(m + 1e-8 * np.eye(n))  # raises LinAlgError on failure
