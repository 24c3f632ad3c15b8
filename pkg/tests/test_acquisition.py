"""Expected improvement and proposal selection."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from shapebo.acquisition import SurrogateState, ei_closed, ei_mc, incumbent, propose_next
from shapebo.shapes import ConstraintSpec, Shape


class TestEiClosed:
    def test_zero_sd_no_improvement(self):
        assert ei_closed(1.0, 0.0, 0.5) == 0.0
        assert ei_closed(0.5, 0.0, 0.5) == 0.0

    def test_zero_sd_certain_improvement(self):
        assert ei_closed(0.0, 0.0, 1.0) == pytest.approx(1.0)

    def test_at_the_mean_equals_standard_density(self):
        assert ei_closed(0.3, 1.0, 0.3) == pytest.approx(norm.pdf(0.0), rel=1e-12)

    def test_tiny_sd_approaches_myopic_improvement(self):
        assert ei_closed(-1.0, 1e-12, 0.0) == pytest.approx(1.0, abs=1e-9)

    def test_always_nonnegative_and_dominates_myopic(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            mu = rng.normal(0, 3)
            sd = abs(rng.normal(0, 2))
            best = rng.normal(0, 3)
            v = ei_closed(mu, sd, best)
            assert v >= 0.0
            assert v >= max(best - mu, 0.0) - 1e-12

    def test_monotone_in_mu_and_best(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            sd = abs(rng.normal(0, 1)) + 0.01
            best = rng.normal()
            mu1, mu2 = sorted(rng.normal(0, 2, 2))
            assert ei_closed(mu1, sd, best) >= ei_closed(mu2, sd, best) - 1e-12
            b1, b2 = sorted(rng.normal(0, 2, 2))
            mu = rng.normal()
            assert ei_closed(mu, sd, b2) >= ei_closed(mu, sd, b1) - 1e-12

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError):
            ei_closed(0.0, -1.0, 0.0)


class TestEiMc:
    def test_no_improving_samples(self):
        assert ei_mc(np.array([1.0, 2.0, 3.0]), 0.5) == 0.0

    def test_single_sample_unit_improvement(self):
        assert ei_mc(np.array([-0.5]), 0.5) == pytest.approx(1.0)

    def test_matches_closed_form_on_gaussian_samples(self):
        rng = np.random.default_rng(2)
        mu, sd, best = 0.4, 0.8, 0.7
        s = 100_000
        samples = rng.normal(mu, sd, size=s)
        got = ei_mc(samples, best)
        want = ei_closed(mu, sd, best)
        imp = np.maximum(best - samples, 0.0)
        se = imp.std() / math.sqrt(s)
        assert abs(got - want) < 3 * se

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ei_mc(np.array([]), 0.0)


class TestIncumbent:
    def test_single_observation(self):
        inc = incumbent(np.array([[0.5]]), [2.0])
        assert inc.index == 0
        assert inc.posterior_expected_value == 2.0

    def test_picks_minimum(self):
        inc = incumbent(np.array([[0.0], [1.0], [2.0]]), [3.0, 1.0, 2.0])
        assert inc.index == 1
        assert inc.posterior_expected_value == 1.0
        np.testing.assert_array_equal(inc.point, [1.0])

    def test_tie_breaks_to_lowest_index(self):
        inc = incumbent(np.array([[0.0], [1.0]]), [1.0, 1.0])
        assert inc.index == 0


def _state(means, sds, best, samples=None, queried=None):
    return SurrogateState(
        candidate_means=np.asarray(means, dtype=float),
        candidate_sds=np.asarray(sds, dtype=float),
        best=best,
        candidate_samples=samples,
        queried_mask=queried,
    )


class TestProposeNext:
    def test_single_candidate(self):
        cands = np.array([[0.4]])
        got = propose_next(cands, _state([0.0], [1.0], 0.1), None)
        np.testing.assert_array_equal(got, [0.4])

    def test_tie_breaks_to_first_candidate(self):
        cands = np.array([[0.1], [0.9]])
        got = propose_next(cands, _state([0.5, 0.5], [1.0, 1.0], 0.2), None)
        np.testing.assert_array_equal(got, [0.1])

    def test_shift_invariance_of_argmax(self):
        rng = np.random.default_rng(3)
        cands = rng.uniform(0, 1, (20, 1))
        means = rng.normal(0, 1, 20)
        sds = rng.uniform(0.1, 1, 20)
        best = 0.3
        base, info0 = propose_next(cands, _state(means, sds, best), None, return_info=True)
        for shift in (-5.0, 2.5):
            _, info = propose_next(
                cands, _state(means + shift, sds, best + shift), None, return_info=True
            )
            assert info["index"] == info0["index"]

    def test_constrained_uses_mc_samples(self):
        rng = np.random.default_rng(4)
        spec = ConstraintSpec([Shape.CONVEX], grid_size=4).with_grid([[0.0, 1.0]])
        cands = np.array([[0.2], [0.8]])
        # Samples say candidate 1 improves a lot; means say candidate 0.
        samples = np.column_stack([rng.normal(2.0, 0.1, 500), rng.normal(-1.0, 0.1, 500)])
        got = propose_next(
            cands,
            _state([0.0, 5.0], [1.0, 1.0], 0.5, samples=samples),
            spec,
            mc_samples=500,
        )
        np.testing.assert_array_equal(got, [0.8])

    def test_zero_ei_falls_back_to_random_unqueried(self):
        cands = np.array([[0.0], [0.5], [1.0]])
        queried = np.array([True, False, True])
        state = _state([5.0, 5.0, 5.0], [0.0, 0.0, 0.0], 0.0, queried=queried)
        got, info = propose_next(cands, state, None, seed=9, return_info=True)
        assert info["random_fallback"]
        np.testing.assert_array_equal(got, [0.5])

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            propose_next(np.empty((0, 1)), _state([], [], 0.0), None)
