"""Fast invariant suite behind ``shapebo selftest``.

Each check prints one PASS/FAIL line; the suite is a cheap smoke screen over
the library's core identities, not a replacement for the full pytest suite.
"""

from __future__ import annotations

import math

import numpy as np

from shapebo.acquisition import ei_closed, ei_mc
from shapebo.benchmarks import mixture_median, paper_prior, posterior_mixture
from shapebo.bo import bo_run
from shapebo.design import maximin_lhs
from shapebo.gp import Dataset, condition, prior_joint
from shapebo.kernel import HyperParams, se_cov, se_cov_deriv
from shapebo.shapes import ConstraintSpec, Shape, quasiconvex_pattern_ok
from shapebo.tmvn import sample_tmvn

_Z = 0.3989422804014327  # standard normal density at zero


def _check_kernel_derivatives():
    rng = np.random.default_rng(0)
    for _ in range(40):
        d = int(rng.integers(1, 4))
        theta = HyperParams(0.0, rng.uniform(0.5, 2.0), 0.0, rng.uniform(0.3, 2.0, d))
        x, x2 = rng.uniform(-2, 2, d), rng.uniform(-2, 2, d)
        j = int(rng.integers(d))
        h = 1e-5
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fd = (se_cov(xp, x2, theta) - se_cov(xm, x2, theta)) / (2 * h)
        got = se_cov_deriv(x, x2, (j, 1), None, theta)
        if abs(got - fd) > 1e-4 * max(abs(fd), 1e-3):
            return False
    theta = HyperParams(0.0, 1.7, 0.0, np.array([0.8]))
    x = np.array([0.1])
    ok = math.isclose(se_cov_deriv(x, x, (0, 1), (0, 1), theta), 2 * 0.8 * 1.7, rel_tol=1e-12)
    ok &= math.isclose(se_cov_deriv(x, x, (0, 2), (0, 2), theta), 12 * 0.8**2 * 1.7, rel_tol=1e-12)
    return ok


def _check_lhs_bins():
    pts = maximin_lhs(16, 3, seed=5)
    for j in range(3):
        bins = np.sort(np.floor(pts[:, j] * 16).astype(int))
        if not np.array_equal(bins, np.arange(16)):
            return False
    return True


def _check_pattern_oracle():
    import itertools

    for k in range(1, 7):
        for signs in itertools.product((-1.0, 0.0, 1.0), repeat=k):
            coords = np.arange(k, dtype=float)
            want = any(
                all(v <= 0 for v in signs[:s]) and all(v >= 0 for v in signs[s:])
                for s in range(k + 1)
            )
            if quasiconvex_pattern_ok(coords, np.array(signs)) != want:
                return False
    return True


def _check_tmvn_halfnormal():
    s = sample_tmvn([0.0], [[1.0]], [0.0], [np.inf], 20000, seed=3)
    return bool((s >= 0).all()) and abs(float(s.mean()) - math.sqrt(2 / math.pi)) < 0.02


def _check_ei():
    if not math.isclose(ei_closed(0.0, 1.0, 0.0), _Z, rel_tol=1e-9):
        return False
    rng = np.random.default_rng(1)
    samples = rng.normal(0.4, 0.8, size=200_000)
    return abs(ei_mc(samples, 0.7) - ei_closed(0.4, 0.8, 0.7)) < 0.01


def _check_mixture():
    post = posterior_mixture(paper_prior(), 1, 1)
    if not (abs(post.weights[0] - 0.6) < 1e-10 and abs(post.weights[1] - 0.4) < 1e-10):
        return False
    from shapebo.benchmarks import BetaMixture

    med = mixture_median(BetaMixture([1.0], [3.0], [1.0]))
    return abs(med - 2.0 ** (-1.0 / 3.0)) < 1e-9


def _check_conditioning():
    theta = HyperParams(0.5, 2.0, 0.0, np.array([1.0]))
    p = np.array([0.3])
    prior = prior_joint([p, p], theta)
    post = condition(prior, [0], [1.25], 0.0)
    return abs(post.mean[0] - 1.25) < 1e-6 and post.cov[0, 0] <= 1e-8 * 2.0 * 1.01


def _check_monotone_draws():
    x = np.linspace(0, 1, 6)[:, None]
    y = np.sort(np.random.default_rng(2).normal(size=6)) * 0.5 + x[:, 0]
    theta = HyperParams(float(y.mean()), float(y.var() + 0.1), 1e-4, np.array([3.0]))
    spec = ConstraintSpec([Shape.MONOTONE_INCREASING], grid_size=20).with_grid(
        [[0.0, 1.0]], observed=x, seed=0
    )
    from shapebo.constrained import sample_constrained_posterior
    from shapebo.shapes import build_derivative_requests

    layout = [*x, *x] + [req for req, _ in build_derivative_requests(spec)]
    post = condition(prior_joint(layout, theta), np.arange(6), y, theta.noise_var_sigma2)
    cp = sample_constrained_posterior(post, spec, count=50, seed=4)
    return bool((cp.deriv_samples >= 0).all()) and cp.samples.shape == (50, 6)


def _check_bo_determinism():
    def quad(x):
        return float((x[0] - 0.3) ** 2)

    spec = ConstraintSpec([Shape.NONE])
    kw = dict(init_count=2, iterations=2, seed=11, chain_len=300, burn_in=100)
    a = bo_run(quad, [[0.0, 1.0]], spec, **kw)
    b = bo_run(quad, [[0.0, 1.0]], spec, **kw)
    pts_equal = all(np.array_equal(r1.queried_point, r2.queried_point) for r1, r2 in zip(a, b))
    return pts_equal and len(a) == 4


CHECKS = [
    ("kernel derivative identities", _check_kernel_derivatives),
    ("latin hypercube bin occupancy", _check_lhs_bins),
    ("quasiconvex pattern oracle (exhaustive k<=6)", _check_pattern_oracle),
    ("truncated-normal half-normal mean", _check_tmvn_halfnormal),
    ("expected improvement identities", _check_ei),
    ("beta-mixture posterior update and median", _check_mixture),
    ("noiseless GP interpolation", _check_conditioning),
    ("monotone constrained draws", _check_monotone_draws),
    ("BO loop determinism", _check_bo_determinism),
]


def run_selftest() -> bool:
    """Run every check, print one PASS/FAIL line each, return overall result."""
    all_ok = True
    for name, check in CHECKS:
        try:
            ok = bool(check())
        except Exception as exc:  # noqa: BLE001 - a crash is a failure
            print(f"FAIL {name}: raised {type(exc).__name__}: {exc}")
            all_ok = False
            continue
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        all_ok &= ok
    return all_ok
