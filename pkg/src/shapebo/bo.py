"""Sequential Bayesian-optimization loop with optional shape constraints.

Each iteration refits hyperparameters on the unconstrained likelihood (every
``refit_every`` iterations), conditions the joint GP over candidates,
observed points, and constraint-grid derivatives, draws constrained sample
paths when a constraint is active, proposes the expected-improvement
maximizer over the candidate set, and evaluates the objective once.  Because
observations are noisy, progress is tracked through the incumbent: the
observed point with minimal posterior expected value.  Each trace row stores
the incumbent given all data through that row, so the final row reflects the
complete run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from shapebo.acquisition import Incumbent, SurrogateState, incumbent, propose_next
from shapebo.constrained import ConstraintSamplingError, sample_constrained_posterior
from shapebo.design import maximin_lhs
from shapebo.gp import Dataset, PriorConfig, condition, fit_hyperparams, prior_joint
from shapebo.kernel import HyperParams
from shapebo.shapes import ConstraintSpec, build_derivative_requests

__all__ = ["RunRecord", "ObjectiveError", "bo_run"]

_Z975 = 1.959963984540054

#: Constrained-sample paths below this count are too noisy to rank EI with;
#: the iteration falls back to the unconstrained posterior instead.
MIN_USABLE_SAMPLES = 10


class ObjectiveError(RuntimeError):
    """Objective callback raised; carries the trace built so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass
class RunRecord:
    """One row of the optimization trace."""

    iteration: int
    queried_point: np.ndarray
    observed_y: float
    incumbent: Incumbent
    hyperparams: HyperParams
    acceptance_rate: float | None = None
    incumbent_ci_width: float | None = None
    random_fallback: bool = False
    wall_ms: float = 0.0


def _eval_objective(objective, x, records):
    try:
        return float(objective(x))
    except Exception as exc:  # noqa: BLE001 - surfaced with partial trace
        raise ObjectiveError(f"objective failed at {x}: {exc}", records) from exc


def _snap_to_candidates(points, candidates):
    d2 = np.sum((points[:, None, :] - candidates[None, :, :]) ** 2, axis=2)
    return candidates[np.argmin(d2, axis=1)]


def _queried_mask(candidates, X):
    return np.any(np.all(candidates[:, None, :] == X[None, :, :], axis=2), axis=1)


class _Pipeline:
    """Posterior summaries for one iteration's data snapshot."""

    def __init__(self, inc, width, acceptance, state, cands):
        self.inc = inc
        self.width = width
        self.acceptance = acceptance
        self.state = state
        self.cands = cands


def bo_run(
    objective,
    box,
    spec: ConstraintSpec,
    init_count: int = 5,
    iterations: int = 30,
    refit_every: int = 1,
    seed=0,
    *,
    candidates=None,
    candidates_per_iter: int = 512,
    mc_samples: int = 200,
    chain_len: int = 20000,
    burn_in: int = 5000,
    max_tries: int = 50_000,
    priors: PriorConfig | None = None,
):
    """Run the BO loop; returns ``init_count + iterations`` RunRecords.

    Parameters
    ----------
    objective : callable
        ``(d-vector) -> float``; may be stochastic.  A failure aborts the run
        with :class:`ObjectiveError` carrying the partial trace.
    box : array_like, shape (d, 2)
        Per-dimension search bounds.
    spec : ConstraintSpec
        Shape declarations; an all-None spec runs the unconstrained loop.
    candidates : ndarray, optional
        Fixed finite candidate set (e.g. an integer domain).  When omitted, a
        fresh Latin hypercube of ``candidates_per_iter`` points is drawn each
        iteration.  Initial-design points snap to the nearest candidate.
    seed
        Single entropy source; every internal stream (design, grid, chains,
        samplers, tie-breaking) derives from it, so reruns are identical.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    if box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("box must be (d, 2) with lo < hi")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if init_count < 2:
        raise ValueError(f"init_count must be >= 2, got {init_count}")
    if refit_every < 1:
        raise ValueError(f"refit_every must be >= 1, got {refit_every}")
    if spec.dim != d:
        raise ValueError(f"spec covers {spec.dim} dimensions, box has {d}")
    if candidates is not None:
        candidates = np.atleast_2d(np.asarray(candidates, dtype=float))

    ss = np.random.SeedSequence(seed)
    s_design, s_grid, s_cand, s_chain, s_sample, s_propose = ss.spawn(6)
    cand_seeds = s_cand.spawn(iterations + 1)
    chain_seeds = s_chain.spawn(iterations)
    sample_seeds = s_sample.spawn(iterations + 1)
    propose_seeds = s_propose.spawn(iterations)

    lo, hi = box[:, 0], box[:, 1]
    X0 = lo + maximin_lhs(init_count, d, seed=s_design) * (hi - lo)
    if candidates is not None:
        X0 = _snap_to_candidates(X0, candidates)

    records: list[RunRecord] = []
    X = np.empty((0, d))
    y = np.empty(0)
    init_times = []
    for r in range(init_count):
        t0 = time.perf_counter()
        val = _eval_objective(objective, X0[r], records)
        init_times.append((time.perf_counter() - t0) * 1e3)
        X = np.vstack([X, X0[r][None, :]])
        y = np.append(y, val)

    theta = fit_hyperparams(
        Dataset(X, y), priors, chain_len=chain_len, burn_in=burn_in,
        seed=chain_seeds[0], box=box,
    )

    # Retroactive incumbents for the initial design, under the first fit and
    # the data available at each row.
    for r in range(init_count):
        prefix = slice(0, r + 1)
        layout = [*X[prefix], *X[prefix]]
        post = condition(
            prior_joint(layout, theta), np.arange(r + 1), y[prefix], theta.noise_var_sigma2
        )
        inc = incumbent(X[prefix], post.mean)
        sd_inc = float(np.sqrt(max(post.cov[inc.index, inc.index], 0.0)))
        records.append(
            RunRecord(
                iteration=r,
                queried_point=X[r].copy(),
                observed_y=float(y[r]),
                incumbent=inc,
                hyperparams=theta,
                incumbent_ci_width=2.0 * _Z975 * sd_inc,
                wall_ms=init_times[r],
            )
        )

    def pipeline(X, y, theta, t) -> _Pipeline:
        n = X.shape[0]
        cands = (
            candidates
            if candidates is not None
            else lo + maximin_lhs(candidates_per_iter, d, seed=cand_seeds[t], restarts=1) * (hi - lo)
        )
        c = cands.shape[0]
        layout = [*X, *cands, *X]
        spec_grid = None
        if spec.active:
            spec_grid = spec.with_grid(box, observed=X, seed=s_grid)
            layout += [req for req, _ in build_derivative_requests(spec_grid)]
        post = condition(prior_joint(layout, theta), np.arange(n), y, theta.noise_var_sigma2)
        means = post.mean
        sds = np.sqrt(np.clip(np.diag(post.cov), 0.0, None))

        samples = None
        acceptance = None
        if spec.active:
            try:
                cp = sample_constrained_posterior(
                    post, spec_grid, mc_samples, seed=sample_seeds[t], max_tries=max_tries
                )
            except ConstraintSamplingError as err:
                cp = err.partial
            acceptance = cp.acceptance_rate
            if cp.samples.shape[0] >= MIN_USABLE_SAMPLES:
                samples = cp.samples

        if samples is not None:
            obs_means = samples[:, c : c + n].mean(axis=0)
            inc = incumbent(X, obs_means)
            lo_q, hi_q = np.percentile(samples[:, c + inc.index], [2.5, 97.5])
            width = float(hi_q - lo_q)
        else:
            inc = incumbent(X, means[c : c + n])
            width = 2.0 * _Z975 * float(sds[c + inc.index])
        state = SurrogateState(
            candidate_means=means[:c],
            candidate_sds=sds[:c],
            best=inc.posterior_expected_value,
            candidate_samples=None if samples is None else samples[:, :c],
            queried_mask=_queried_mask(cands, X),
        )
        return _Pipeline(inc, width, acceptance, state, cands)

    for t in range(iterations):
        t0 = time.perf_counter()
        if t > 0 and t % refit_every == 0:
            theta = fit_hyperparams(
                Dataset(X, y), priors, chain_len=chain_len, burn_in=burn_in,
                seed=chain_seeds[t], box=box,
            )
        P = pipeline(X, y, theta, t)
        # This snapshot conditions on everything through the previous row, so
        # it finalizes that row's incumbent (for t == 0: the last init row,
        # upgrading it to the constrained posterior when constraints are on).
        prev = records[init_count + t - 1]
        prev.incumbent = P.inc
        prev.incumbent_ci_width = P.width

        x_next, info = propose_next(
            P.cands, P.state, spec, mc_samples=mc_samples,
            seed=propose_seeds[t], return_info=True,
        )
        y_next = _eval_objective(objective, x_next, records)
        X = np.vstack([X, x_next[None, :]])
        y = np.append(y, y_next)
        records.append(
            RunRecord(
                iteration=init_count + t,
                queried_point=x_next.copy(),
                observed_y=float(y_next),
                incumbent=P.inc,
                hyperparams=theta,
                acceptance_rate=P.acceptance,
                incumbent_ci_width=P.width,
                random_fallback=bool(info["random_fallback"]),
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )

    # One closing pass conditions on the complete data so the final row's
    # incumbent accounts for its own observation.
    t0 = time.perf_counter()
    final = pipeline(X, y, theta, iterations)
    records[-1].incumbent = final.inc
    records[-1].incumbent_ci_width = final.width
    records[-1].wall_ms += (time.perf_counter() - t0) * 1e3
    return records
