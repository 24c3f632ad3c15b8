"""Joint Gaussian model over observations and derivative values.

Hyperparameters are fit by adaptive random-walk Metropolis on the marginal
(unconstrained) likelihood with Cauchy / half-Cauchy priors, ignoring shape
constraints; the coordinatewise posterior median is plugged in.  Inputs are
rescaled to the unit box and outputs standardized internally, with the
transform undone on the returned parameters, so the priors always apply on
the standardized scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky as sp_cholesky
from scipy.linalg import solve_triangular

from shapebo.kernel import DerivRequest, HyperParams, assemble_cov_matrix

__all__ = [
    "Dataset",
    "JointGaussian",
    "PriorConfig",
    "MCMCDiagnosticError",
    "prior_joint",
    "marginal_loglik",
    "fit_hyperparams",
    "fit_hyperparams_full",
    "FitResult",
    "condition",
]

LOG_2PI = math.log(2.0 * math.pi)


class MCMCDiagnosticError(RuntimeError):
    """Raised when the hyperparameter chain fails its health checks."""


@dataclass
class Dataset:
    """Query locations and noisy observations."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.points.shape[0] != self.values.shape[0]:
            raise ValueError(
                f"{self.points.shape[0]} points but {self.values.shape[0]} values"
            )
        if self.points.shape[0] < 1:
            raise ValueError("dataset needs at least one observation")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass
class JointGaussian:
    """Gaussian law over stacked function values and derivative values.

    ``layout[i]`` identifies coordinate ``i`` as either a d-vector (function
    value at that point) or a :class:`DerivRequest`.
    """

    mean: np.ndarray
    cov: np.ndarray
    layout: list

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        m = self.mean.shape[0]
        if self.cov.shape != (m, m):
            raise ValueError(f"cov shape {self.cov.shape} does not match mean length {m}")
        if len(self.layout) != m:
            raise ValueError(f"layout length {len(self.layout)} does not match mean length {m}")

    @property
    def size(self):
        return self.mean.shape[0]

    def is_function_coord(self, i) -> bool:
        return not isinstance(self.layout[i], DerivRequest)

    def function_indices(self):
        return [i for i in range(self.size) if self.is_function_coord(i)]

    def derivative_indices(self):
        return [i for i in range(self.size) if not self.is_function_coord(i)]


@dataclass(frozen=True)
class PriorConfig:
    """Cauchy / half-Cauchy prior scales for the GP hyperparameters."""

    mu_loc: float = 0.0
    mu_scale: float = 1.0
    tau2_scale: float = 0.25
    sigma2_scale: float = 0.25
    psi_scale: float = 5.0

    def __post_init__(self):
        for name in ("mu_scale", "tau2_scale", "sigma2_scale", "psi_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def prior_joint(layout, theta: HyperParams) -> JointGaussian:
    """Prior joint Gaussian over a layout of function and derivative coords.

    The constant prior mean contributes ``mu`` to function coordinates and 0
    to every derivative coordinate.
    """
    layout = list(layout)
    if not layout:
        raise ValueError("layout must be nonempty")
    mean = np.array(
        [0.0 if isinstance(e, DerivRequest) else theta.mean_mu for e in layout]
    )
    cov = assemble_cov_matrix(layout, layout, theta)
    return JointGaussian(mean, cov, layout)


def _sq_dists(points):
    # Stack of per-dimension squared separations, shape (d, n, n).
    diff = points[:, None, :] - points[None, :, :]
    return np.ascontiguousarray(np.moveaxis(diff * diff, -1, 0))


def _loglik_from_dists(mu, tau2, sigma2, psi, sq, y, jitter_rel=1e-8):
    n = y.shape[0]
    K = tau2 * np.exp(-np.tensordot(psi, sq, axes=1))
    K.flat[:: n + 1] += sigma2 + jitter_rel * tau2
    L = sp_cholesky(K, lower=True, check_finite=False)
    w = solve_triangular(L, y - mu, lower=True, check_finite=False)
    return -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI


def marginal_loglik(theta: HyperParams, data: Dataset) -> float:
    """Log density of the observations under ``N(1 mu, K + sigma2 I)``."""
    if data.dim != theta.dim:
        raise ValueError(f"data dimension {data.dim} != hyperparameter dimension {theta.dim}")
    sq = _sq_dists(data.points)
    return _loglik_from_dists(
        theta.mean_mu,
        theta.signal_var_tau2,
        theta.noise_var_sigma2,
        theta.lengthscale_prec_psi,
        sq,
        data.values,
    )


def _log_half_cauchy(x, scale):
    # density 2 / (pi * scale * (1 + (x/scale)^2)) on x > 0
    return math.log(2.0 / (math.pi * scale)) - math.log1p((x / scale) ** 2)


def _log_cauchy(x, loc, scale):
    return -math.log(math.pi * scale) - math.log1p(((x - loc) / scale) ** 2)


@dataclass
class FitResult:
    """Plug-in estimate plus chain diagnostics."""

    params: HyperParams
    acceptance_rate: float
    draws: np.ndarray  # post-burn-in draws of (mu, log tau2, log sigma2, log psi...)


def fit_hyperparams_full(
    data: Dataset,
    priors: PriorConfig | None = None,
    chain_len: int = 20000,
    burn_in: int = 5000,
    seed=0,
    box=None,
) -> FitResult:
    """Adaptive random-walk Metropolis fit; see :func:`fit_hyperparams`."""
    if chain_len < 1:
        raise ValueError(f"chain_len must be >= 1, got {chain_len}")
    if not chain_len > burn_in >= 0:
        raise ValueError(f"need chain_len > burn_in >= 0, got {chain_len}, {burn_in}")
    priors = priors or PriorConfig()
    d = data.dim

    # Rescale inputs to the unit box and standardize outputs; priors and the
    # chain live on this scale.
    if box is None:
        lo = data.points.min(axis=0)
        hi = data.points.max(axis=0)
    else:
        box = np.atleast_2d(np.asarray(box, dtype=float))
        lo, hi = box[:, 0], box[:, 1]
    width = np.where(hi - lo > 0, hi - lo, 1.0)
    x_std = (data.points - lo) / width
    y_mean = float(np.mean(data.values))
    y_sd = float(np.std(data.values))
    if y_sd == 0.0:
        y_sd = 1.0
    y_std = (data.values - y_mean) / y_sd

    sq = _sq_dists(x_std)

    def log_target(v):
        mu, ltau2, lsig2 = v[0], v[1], v[2]
        lpsi = v[3:]
        tau2, sig2, psi = math.exp(ltau2), math.exp(lsig2), np.exp(lpsi)
        try:
            ll = _loglik_from_dists(mu, tau2, sig2, psi, sq, y_std)
        except np.linalg.LinAlgError:
            return -np.inf
        lp = _log_cauchy(mu, priors.mu_loc, priors.mu_scale)
        lp += _log_half_cauchy(tau2, priors.tau2_scale) + ltau2
        lp += _log_half_cauchy(sig2, priors.sigma2_scale) + lsig2
        for j in range(d):
            lp += _log_half_cauchy(psi[j], priors.psi_scale) + lpsi[j]
        return ll + lp

    var0 = float(np.var(y_std))
    if var0 <= 0.0:
        var0 = 1.0
    v = np.concatenate(
        [
            [float(np.median(y_std)), math.log(var0), math.log(var0 / 10.0)],
            np.zeros(d),
        ]
    )
    rng = np.random.default_rng(seed)
    target = log_target(v)
    scale = 0.3
    accepted_post = 0
    keep = np.empty((chain_len - burn_in, 3 + d))
    for t in range(chain_len):
        prop = v + scale * rng.standard_normal(3 + d)
        target_prop = log_target(prop)
        log_alpha = target_prop - target
        accept = math.log(rng.random()) < log_alpha if log_alpha < 0 else True
        if accept:
            v, target = prop, target_prop
        if t < burn_in:
            # Robbins-Monro step toward ~30% acceptance; frozen after burn-in.
            alpha = 1.0 if log_alpha >= 0 else math.exp(max(log_alpha, -50.0))
            scale *= math.exp((alpha - 0.3) / (t + 1) ** 0.6)
        else:
            keep[t - burn_in] = v
            accepted_post += accept

    rate = accepted_post / max(chain_len - burn_in, 1)
    if accepted_post == 0:
        raise MCMCDiagnosticError(
            f"hyperparameter chain accepted 0 of {chain_len - burn_in} post-burn-in "
            f"proposals (final step scale {scale:.3g}); the posterior may be degenerate"
        )
    med = np.median(keep, axis=0)
    params = HyperParams(
        mean_mu=med[0] * y_sd + y_mean,
        signal_var_tau2=math.exp(med[1]) * y_sd**2,
        noise_var_sigma2=math.exp(med[2]) * y_sd**2,
        lengthscale_prec_psi=np.exp(med[3:]) / width**2,
    )
    return FitResult(params=params, acceptance_rate=rate, draws=keep)


def fit_hyperparams(
    data: Dataset,
    priors: PriorConfig | None = None,
    chain_len: int = 20000,
    burn_in: int = 5000,
    seed=0,
    box=None,
) -> HyperParams:
    """Posterior-median hyperparameters from the unconstrained likelihood.

    Runs adaptive random-walk Metropolis on ``(mu, log tau2, log sigma2,
    log psi_1..d)`` targeting the marginal log likelihood plus log priors
    (with the change-of-variables Jacobian for the log transforms) and
    returns the coordinatewise median of the post-burn-in draws.
    Deterministic for a fixed ``seed``.
    """
    return fit_hyperparams_full(data, priors, chain_len, burn_in, seed, box).params


def condition(prior: JointGaussian, obs_idx, y, sigma2: float) -> JointGaussian:
    """Gaussian law of the remaining coordinates given noisy observations.

    ``obs_idx`` must select function-value coordinates; ``y`` holds the
    observed values there, contaminated by iid ``N(0, sigma2)`` noise.  Uses
    a Cholesky factorization of the observed block (with a small relative
    jitter so ``sigma2 = 0`` stays solvable).
    """
    obs_idx = np.asarray(obs_idx, dtype=np.intp)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    if obs_idx.size != y.shape[0]:
        raise ValueError(f"{obs_idx.size} observed indices but {y.shape[0]} values")
    if obs_idx.size == 0:
        return JointGaussian(prior.mean.copy(), prior.cov.copy(), list(prior.layout))
    for i in obs_idx:
        if isinstance(prior.layout[i], DerivRequest):
            raise ValueError(f"obs_idx {i} is a derivative coordinate; only function values observable")

    mask = np.ones(prior.size, dtype=bool)
    mask[obs_idx] = False
    rest_idx = np.flatnonzero(mask)

    K_oo = prior.cov[np.ix_(obs_idx, obs_idx)].copy()
    jitter = 1e-8 * float(np.max(np.diag(K_oo)))
    K_oo.flat[:: K_oo.shape[0] + 1] += sigma2 + jitter
    K_ro = prior.cov[np.ix_(rest_idx, obs_idx)]
    L = sp_cholesky(K_oo, lower=True, check_finite=False)
    resid = solve_triangular(L, y - prior.mean[obs_idx], lower=True, check_finite=False)
    half = solve_triangular(L, K_ro.T, lower=True, check_finite=False)
    mean = prior.mean[rest_idx] + half.T @ resid
    cov = prior.cov[np.ix_(rest_idx, rest_idx)] - half.T @ half
    layout = [prior.layout[i] for i in rest_idx]
    return JointGaussian(mean, cov, layout)
