"""Expected-improvement acquisition over finite candidate sets.

EI has the standard closed form under a Gaussian posterior; under the
constrained (non-Gaussian) posterior it is estimated by Monte Carlo over the
accepted sample paths.  Proposals maximize EI over a candidate set, with ties
broken toward the lowest candidate index; when every candidate has zero EI a
seeded uniform draw over unqueried candidates keeps the loop moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from shapebo.shapes import ConstraintSpec

__all__ = ["Incumbent", "SurrogateState", "ei_closed", "ei_mc", "incumbent", "propose_next"]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass
class Incumbent:
    """Observed point minimizing the posterior expected objective."""

    point: np.ndarray
    posterior_expected_value: float
    index: int = 0


@dataclass
class SurrogateState:
    """Per-iteration posterior summaries the acquisition step consumes.

    ``candidate_samples`` is an ``(s, c)`` matrix of constrained draws when a
    constraint is active, else None and the Gaussian closed form applies.
    """

    candidate_means: np.ndarray
    candidate_sds: np.ndarray
    best: float
    candidate_samples: np.ndarray | None = None
    queried_mask: np.ndarray | None = None


def ei_closed(mu, sd, best):
    """Closed-form expected improvement for minimization; >= 0 always.

    Vectorizes over ``mu``/``sd``.  At ``sd == 0`` degrades to the myopic
    improvement ``max(best - mu, 0)``.
    """
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be >= 0")
    imp = best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        val = np.where(
            sd > 0,
            imp * ndtr(z) + sd * np.exp(-0.5 * z * z) / _SQRT_2PI,
            np.maximum(imp, 0.0),
        )
    out = np.maximum(val, 0.0)
    return float(out) if out.ndim == 0 else out


def ei_mc(samples_at_x, best):
    """Monte-Carlo expected improvement: mean of ``max(best - sample, 0)``."""
    samples = np.asarray(samples_at_x, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one sample")
    return float(np.mean(np.maximum(best - samples, 0.0)))


def incumbent(points, posterior_means) -> Incumbent:
    """Minimum posterior mean among observed points; first index wins ties."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    means = np.atleast_1d(np.asarray(posterior_means, dtype=float))
    if points.shape[0] != means.shape[0] or means.shape[0] < 1:
        raise ValueError("need one posterior mean per observed point, at least one")
    i = int(np.argmin(means))
    return Incumbent(point=points[i].copy(), posterior_expected_value=float(means[i]), index=i)


def propose_next(
    candidates,
    state: SurrogateState,
    spec: ConstraintSpec | None,
    mc_samples: int = 200,
    seed=0,
    return_info: bool = False,
):
    """Candidate maximizing expected improvement under the current surrogate.

    Uses Monte-Carlo EI over constrained samples when a constraint is active
    (up to ``mc_samples`` rows), the Gaussian closed form otherwise.  Ties go
    to the lowest candidate index; already-queried candidates stay eligible.
    If every EI is zero, returns a seeded uniform draw among unqueried
    candidates and flags it.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] < 1:
        raise ValueError("candidate set must be nonempty")
    constrained = (
        spec is not None
        and spec.active
        and state.candidate_samples is not None
        and state.candidate_samples.shape[0] > 0
    )
    if constrained:
        rows = state.candidate_samples[:mc_samples]
        ei = np.mean(np.maximum(state.best - rows, 0.0), axis=0)
    else:
        ei = np.atleast_1d(ei_closed(state.candidate_means, state.candidate_sds, state.best))

    random_fallback = False
    if np.max(ei) <= 0.0:
        random_fallback = True
        rng = np.random.default_rng(seed)
        if state.queried_mask is not None and not state.queried_mask.all():
            pool = np.flatnonzero(~state.queried_mask)
        else:
            pool = np.arange(candidates.shape[0])
        ix = int(rng.choice(pool))
    else:
        ix = int(np.argmax(ei))
    point = candidates[ix].copy()
    if return_info:
        return point, {"index": ix, "random_fallback": random_fallback, "ei": ei}
    return point
