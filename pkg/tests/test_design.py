"""Latin hypercube design properties."""

import numpy as np
import pytest

from shapebo.design import maximin_lhs, _min_pairwise_dist


def test_single_point_in_unit_box():
    pts = maximin_lhs(1, 3, seed=0)
    assert pts.shape == (1, 3)
    assert np.all((pts >= 0) & (pts <= 1))


def test_columns_occupy_every_bin():
    for seed in range(5):
        n = 17
        pts = maximin_lhs(n, 2, seed=seed)
        for j in range(2):
            bins = np.sort(np.floor(pts[:, j] * n).astype(int))
            np.testing.assert_array_equal(bins, np.arange(n))


def test_deterministic_given_seed():
    a = maximin_lhs(12, 3, seed=99, restarts=7)
    b = maximin_lhs(12, 3, seed=99, restarts=7)
    np.testing.assert_array_equal(a, b)


def test_maximin_distance_monotone_in_restarts():
    # Same seed stream: more restarts can only improve the kept design.
    dists = [
        _min_pairwise_dist(maximin_lhs(10, 2, seed=4, restarts=r)) for r in range(1, 8)
    ]
    assert all(d2 >= d1 - 1e-15 for d1, d2 in zip(dists, dists[1:]))


def test_invalid_args_rejected():
    with pytest.raises(ValueError):
        maximin_lhs(0, 2)
    with pytest.raises(ValueError):
        maximin_lhs(3, 0)
    with pytest.raises(ValueError):
        maximin_lhs(3, 2, restarts=0)
