"""Benchmark objectives: binomial sample-size loss and analytic test surfaces.

The binomial benchmark scores a sample size ``n`` by the Monte-Carlo average
of ``|theta - m_y| + 0.0008 n``, where ``theta`` is drawn from an
equal-weighted mixture of Beta(3,1) and Beta(3,3), ``y ~ Binomial(n, theta)``,
and ``m_y`` is the posterior median under the conjugate mixture update.  A
synthetic two-dimensional surface with a componentwise-quasiconvex valley
stands in for hyperparameter-tuning error surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betainc, gammaln

from shapebo.shapes import Shape

__all__ = [
    "BetaMixture",
    "LossSpec",
    "ObjectiveEntry",
    "paper_prior",
    "posterior_mixture",
    "mixture_cdf",
    "mixture_median",
    "binomial_loss_objective",
    "synthetic_quasiconvex_2d",
    "test_functions",
]


@dataclass(frozen=True, eq=False)
class BetaMixture:
    """Finite mixture of Beta distributions."""

    weights: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        for name in ("weights", "alphas", "betas"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        k = self.weights.shape[0]
        if self.alphas.shape != (k,) or self.betas.shape != (k,):
            raise ValueError("weights, alphas, betas must have equal length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(self.alphas <= 0) or np.any(self.betas <= 0):
            raise ValueError("alphas and betas must be positive")

    def key(self):
        return (tuple(self.weights), tuple(self.alphas), tuple(self.betas))


@dataclass(frozen=True)
class LossSpec:
    """Loss of running an experiment of size n: estimation error plus cost."""

    sampling_cost: float = 0.0008
    estimator: str = "posterior-median"

    def __post_init__(self):
        if self.sampling_cost < 0:
            raise ValueError("sampling_cost must be >= 0")
        if self.estimator != "posterior-median":
            raise ValueError(f"unsupported estimator {self.estimator!r}")


def paper_prior() -> BetaMixture:
    """Equal-weighted mixture of Beta(3,1) and Beta(3,3)."""
    return BetaMixture([0.5, 0.5], [3.0, 3.0], [1.0, 3.0])


def _log_beta(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def posterior_mixture(prior: BetaMixture, y: int, n: int) -> BetaMixture:
    """Conjugate update of a Beta mixture after y successes in n trials.

    Component ``i`` becomes Beta(alpha_i + y, beta_i + n - y); the weights are
    reweighted by the component marginal likelihoods, computed in log space.
    """
    if not 0 <= y <= n:
        raise ValueError(f"need 0 <= y <= n, got y={y}, n={n}")
    a_new = prior.alphas + y
    b_new = prior.betas + (n - y)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights) + _log_beta(a_new, b_new) - _log_beta(prior.alphas, prior.betas)
    logw -= np.max(logw[np.isfinite(logw)])
    w = np.exp(logw)
    w /= w.sum()
    return BetaMixture(w, a_new, b_new)


def mixture_cdf(mix: BetaMixture, x) -> np.ndarray:
    """Mixture CDF: weighted regularized incomplete beta functions."""
    x = np.asarray(x, dtype=float)
    vals = betainc(mix.alphas, mix.betas, np.clip(x[..., None], 0.0, 1.0))
    return vals @ mix.weights


def mixture_median(mix: BetaMixture) -> float:
    """Root of CDF(x) = 1/2 by bisection on [0, 1] to 1e-10."""
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if float(mixture_cdf(mix, np.asarray(mid))) < 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=None)
def _cached_median(prior_key, y, n):
    w, a, b = prior_key
    return mixture_median(posterior_mixture(BetaMixture(w, a, b), y, n))


def _binomial_loss_rng(n, n_sims, spec, prior, rng):
    comp = rng.choice(prior.weights.shape[0], size=n_sims, p=prior.weights)
    theta = rng.beta(prior.alphas[comp], prior.betas[comp])
    ys = rng.binomial(int(n), theta)
    key = prior.key()
    medians = {int(yy): _cached_median(key, int(yy), int(n)) for yy in np.unique(ys)}
    m = np.fromiter((medians[int(yy)] for yy in ys), dtype=float, count=n_sims)
    return float(np.mean(np.abs(theta - m)) + spec.sampling_cost * n)


def binomial_loss_objective(
    n: int,
    n_sims: int = 100,
    spec: LossSpec | None = None,
    prior: BetaMixture | None = None,
    seed=0,
) -> float:
    """Monte-Carlo expected loss of a size-``n`` binomial experiment.

    Each simulation draws a mixture component, then ``theta`` from it, then
    ``y ~ Binomial(n, theta)``, and scores ``|theta - m_y|`` with ``m_y`` the
    posterior-mixture median; the sampling cost ``0.0008 n`` enters exactly.
    Deterministic given ``seed``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n_sims < 1:
        raise ValueError(f"n_sims must be >= 1, got {n_sims}")
    spec = spec or LossSpec()
    prior = prior or paper_prior()
    return _binomial_loss_rng(n, n_sims, spec, prior, np.random.default_rng(seed))


def _synthetic_qc_core(x, noise_sd, rng):
    x = np.asarray(x, dtype=float)
    val = 0.7 * np.log1p((x[0] - 1.5) ** 2) + 0.5 * np.log1p((x[1] + 2.0) ** 2) + 0.1
    if noise_sd > 0:
        val += noise_sd * rng.standard_normal()
    return float(val)


def synthetic_quasiconvex_2d(x, noise_sd: float = 0.05, seed=0) -> float:
    """Noisy componentwise-quasiconvex surface on [-10, 10]^2.

    The deterministic part ``0.7 log(1+(x1-1.5)^2) + 0.5 log(1+(x2+2)^2) + 0.1``
    has its valley at (1.5, -2) and is quasiconvex along each coordinate.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (2,):
        raise ValueError(f"x must be a 2-vector, got shape {x.shape}")
    if np.any(x < -10.0) or np.any(x > 10.0):
        raise ValueError(f"x must lie in [-10, 10]^2, got {x}")
    return _synthetic_qc_core(x, noise_sd, np.random.default_rng(seed))


@dataclass
class ObjectiveEntry:
    """Registry row: search box, known optimum, default shapes, factory.

    ``factory(options)`` returns a callable ``(x, rng) -> float`` so callers
    control the noise stream; ``candidates`` is a fixed candidate matrix for
    discrete domains, or None for continuous ones.
    """

    name: str
    box: np.ndarray
    optimum: np.ndarray | None
    shapes: list
    noisy: bool
    factory: object
    candidates: np.ndarray | None = None
    defaults: dict | None = None


def _make_binomial(options):
    n_sims = int(options.get("n_sims", 100))
    spec = LossSpec(sampling_cost=float(options.get("sampling_cost", 0.0008)))
    prior = paper_prior()

    def objective(x, rng):
        return _binomial_loss_rng(int(round(float(np.atleast_1d(x)[0]))), n_sims, spec, prior, rng)

    return objective


def _make_synthetic_qc(options):
    noise_sd = float(options.get("noise_sd", 0.05))

    def objective(x, rng):
        return _synthetic_qc_core(np.atleast_1d(x), noise_sd, rng)

    return objective


def _make_quad(options):
    center = float(options.get("center", 0.3))

    def objective(x, rng):
        return float((np.atleast_1d(x)[0] - center) ** 2)

    return objective


def _make_logistic(options):
    scale = float(options.get("scale", 0.15))

    def objective(x, rng):
        return float(1.0 / (1.0 + np.exp(-(np.atleast_1d(x)[0] - 0.5) / scale)))

    return objective


def _make_vee(options):
    center = float(options.get("center", 0.7))

    def objective(x, rng):
        return float(abs(np.atleast_1d(x)[0] - center))

    return objective


def test_functions() -> dict:
    """Registry of benchmark objectives, addressed by CLI config names."""
    return {
        "binomial": ObjectiveEntry(
            name="binomial",
            box=np.array([[1.0, 120.0]]),
            optimum=None,
            shapes=[Shape.CONVEX],
            noisy=True,
            factory=_make_binomial,
            candidates=np.arange(1.0, 121.0)[:, None],
            defaults={"n_sims": 100},
        ),
        "synthetic-qc-2d": ObjectiveEntry(
            name="synthetic-qc-2d",
            box=np.array([[-10.0, 10.0], [-10.0, 10.0]]),
            optimum=np.array([1.5, -2.0]),
            shapes=[Shape.QUASICONVEX, Shape.QUASICONVEX],
            noisy=True,
            factory=_make_synthetic_qc,
            defaults={"noise_sd": 0.05},
        ),
        "quad-1d": ObjectiveEntry(
            name="quad-1d",
            box=np.array([[0.0, 1.0]]),
            optimum=np.array([0.3]),
            shapes=[Shape.CONVEX],
            noisy=False,
            factory=_make_quad,
            defaults={},
        ),
        "logistic-1d": ObjectiveEntry(
            name="logistic-1d",
            box=np.array([[0.0, 1.0]]),
            optimum=np.array([0.0]),
            shapes=[Shape.MONOTONE_INCREASING],
            noisy=False,
            factory=_make_logistic,
            defaults={},
        ),
        "vee-1d": ObjectiveEntry(
            name="vee-1d",
            box=np.array([[0.0, 1.0]]),
            optimum=np.array([0.7]),
            shapes=[Shape.QUASICONVEX],
            noisy=False,
            factory=_make_vee,
            defaults={},
        ),
    }
