import math

import numpy as np
import pytest
from scipy import stats

from schoolva.truncnorm import TAIL_THRESHOLD, sample_sign_truncated, standard_lower


def test_half_normal_mean(rng):
    x = sample_sign_truncated(np.zeros(1_000_000), 1.0, np.ones(1_000_000, bool), rng)
    assert x.min() >= 0
    # Monte Carlo SE is about 6e-4
    assert x.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=3e-3)


@pytest.mark.parametrize("a", [-3.0, -0.5, 0.0, 1.2, 4.9, 5.1, 8.0, 30.0])
def test_lower_truncation_matches_scipy(a, rng):
    x = standard_lower(np.full(20_000, a), rng)
    assert x.min() >= a
    ref = stats.truncnorm(a, np.inf)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3
    assert x.mean() == pytest.approx(ref.mean(), abs=5 * ref.std() / math.sqrt(len(x)))


def test_tail_branch_used_beyond_threshold(rng):
    # the inverse CDF would return inf for such bounds
    x = standard_lower(np.array([40.0, 200.0]), rng)
    assert np.all(np.isfinite(x)) and np.all(x >= [40.0, 200.0])
    assert TAIL_THRESHOLD == 5.0


def test_signs_follow_outcome(rng):
    mu = rng.normal(scale=10, size=10_000)
    positive = rng.uniform(size=mu.size) < 0.5
    x = sample_sign_truncated(mu, 0.7, positive, rng)
    assert np.all(x[positive] >= 0)
    assert np.all(x[~positive] < 0)


def test_upper_truncation_by_symmetry(rng):
    x = sample_sign_truncated(np.full(20_000, 1.5), 2.0, np.zeros(20_000, bool), rng)
    ref = stats.truncnorm(-np.inf, (0 - 1.5) / 2.0, loc=1.5, scale=2.0)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3
