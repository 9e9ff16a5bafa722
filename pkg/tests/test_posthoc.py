import math

import numpy as np
import pytest

from schoolva.core import ModelSpec, build_design
from schoolva.posthoc import (
    compute_r_squared,
    compute_vpc,
    correlation_draws,
    school_correlations,
    standardize,
    standardize_estimates,
    summarize_draws,
    summarize_school_effects,
)
from schoolva.sampler import ChainResult

# unstandardized null-model estimates
INTERCEPTS = [[47.018], [4.100], [-1.173]]
SCHOOL = [70.761, 0.046, 0.140]
STUDENT = [297.752, 0.877, 1.000]


def fake_chain(design, rng, D=200, J=None, u=None):
    J = J or 4
    P = sum(design.p)
    omega = np.tile(np.diag([2.0, 0.5, 0.3]), (D, 1, 1)) * rng.uniform(0.8, 1.2, size=(D, 1, 1))
    sigma = np.tile(np.diag([4.0, 1.0, 1.0]), (D, 1, 1))
    sigma[:, 0, 1] = sigma[:, 1, 0] = rng.uniform(-1, 1, size=D)
    return ChainResult(
        beta=rng.normal(1.0, 0.1, size=(D, P)),
        beta_names=tuple((r, n) for r in range(3) for n in design.names[r]),
        omega_u=omega,
        sigma_e=sigma,
        u=rng.normal(size=(D, J, 3)) if u is None else u,
        school_ids=tuple(f"s{j}" for j in range(J)),
        names=design.names,
        seed=0, sweeps=D, burn_in=0, iterations=D, thin=1,
    )


def test_null_model_standardization_golden():
    t = standardize(INTERCEPTS, [None] * 3, SCHOOL, STUDENT)
    assert t.D[0] == pytest.approx(368.513)
    got = [c[0] for c in t.coefficients]
    assert got == pytest.approx([2.449, 4.269, -1.099], abs=0.002)
    assert t.school_var == pytest.approx([0.192, 0.050, 0.123], abs=0.001)
    assert t.student_var == pytest.approx([0.808, 0.950, 0.877], abs=0.001)
    assert 100 * t.vpc == pytest.approx([19, 5, 12], abs=0.5)
    assert np.all(t.r_squared == 0)


def test_unit_total_is_identity():
    t = standardize([[1.5], [-2.0], [0.3]], [None] * 3, [0.25, 0.5, 0.1], [0.75, 0.5, 0.9])
    assert [c[0] for c in t.coefficients] == [1.5, -2.0, 0.3]
    np.testing.assert_array_equal(t.school_var, [0.25, 0.5, 0.1])


def test_vpc_examples():
    assert compute_vpc(0.192, 0.808) == pytest.approx(0.192)
    assert compute_vpc(0.140, 1.000) == pytest.approx(0.1228, abs=5e-5)
    assert compute_vpc(0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        compute_vpc(0.0, 0.0)
    with pytest.raises(ValueError):
        compute_vpc(-0.1, 1.0)


def test_vpc_scale_invariant():
    t = standardize(INTERCEPTS, [None] * 3, SCHOOL, STUDENT)
    raw = [compute_vpc(u, e) for u, e in zip(SCHOOL, STUDENT)]
    np.testing.assert_allclose(t.vpc, raw, rtol=0, atol=1e-9)


def test_r_squared_from_shares():
    # fixed-part variance chosen so that the standardized shares are as given
    for su, se, expected in ((0.036, 0.723, 0.241), (0.071, 0.446, 0.483)):
        x = np.array([-1.0, 1.0])
        fixed = 1.0 - su - se
        t = standardize([[0.0, math.sqrt(fixed)]] * 3, [np.column_stack([np.ones(2), x])] * 3,
                        [su] * 3, [se] * 3)
        assert t.r_squared[0] == pytest.approx(expected, abs=1e-12)
        assert round(t.r_squared[0], 2) == round(expected, 2)


def test_null_model_r_squared_zero(small_data, null_design, rng):
    chain = fake_chain(null_design, rng, J=small_data.J)
    np.testing.assert_array_equal(compute_r_squared(chain, null_design), 0.0)


@pytest.mark.parametrize("per_draw", [False, True])
def test_shares_sum_to_one(covariate_data, rng, per_draw):
    design = build_design(covariate_data, ModelSpec.from_preset("cva"))
    chain = fake_chain(design, rng, J=covariate_data.J)
    t = standardize_estimates(chain, design, per_draw=per_draw)
    np.testing.assert_allclose(t.school_var + t.student_var + t.r_squared, 1.0, atol=1e-9)
    assert np.all(t.r_squared > 0)


def test_standardizing_twice_gives_unit_total(covariate_data, rng):
    design = build_design(covariate_data, ModelSpec.from_preset("va"))
    chain = fake_chain(design, rng, J=covariate_data.J)
    t = standardize_estimates(chain, design)
    again = standardize(t.coefficients, design.X, t.school_var, t.student_var)
    np.testing.assert_allclose(again.D, 1.0, atol=1e-12)


def test_standardized_coefficients_use_means(covariate_data, rng):
    design = build_design(covariate_data, ModelSpec.from_preset("va"))
    chain = fake_chain(design, rng, J=covariate_data.J)
    t = standardize_estimates(chain, design)
    b = chain.beta_draws(1).mean(axis=0)
    su = chain.omega_u[:, 1, 1].mean()
    se = chain.sigma_e[:, 1, 1].mean()
    D = np.var(design.X[1] @ b) + su + se
    np.testing.assert_allclose(t.coefficients[1], b / math.sqrt(D), rtol=1e-12)


# ------------------------------------------------------- school effects


def test_constant_draws_significant():
    s = summarize_draws(np.full((100, 2), 0.7), ["a", "b"])
    np.testing.assert_allclose(s.lo, 0.7)
    np.testing.assert_allclose(s.hi, 0.7)
    assert s.significant.all()


def test_proportion_significant_two_of_three():
    # normal intervals (-0.5,-0.1), (-0.2,0.3), (0.1,0.4) from +-1 draws
    centres = np.array([-0.3, 0.05, 0.25])
    half = np.array([0.2, 0.25, 0.15])
    # +-h alternating gives sd = h * sqrt(D / (D - 1)); rescale to hit 1.96 sd = half
    D = 400
    signs = np.resize([1.0, -1.0], D)[:, None]
    draws = centres + signs * half / 1.96 / math.sqrt(D / (D - 1))
    s = summarize_draws(draws, ["a", "b", "c"], interval="normal")
    np.testing.assert_allclose(s.lo[:, 0], [-0.5, -0.2, 0.1], atol=1e-12)
    np.testing.assert_allclose(s.hi[:, 0], [-0.1, 0.3, 0.4], atol=1e-12)
    assert s.significant[:, 0].tolist() == [True, False, True]
    assert round(100 * s.proportion_significant[0], 1) == 66.7


def test_quantiles_match_order_statistics(rng):
    x = 0.01 * np.arange(1, 1001, dtype=float)
    draws = rng.permutation(x)[:, None]
    s = summarize_draws(draws, ["a"])
    xs = np.sort(x)
    # linear interpolation between order statistics at (n - 1) p
    for p, got in ((0.025, s.lo[0, 0]), (0.975, s.hi[0, 0])):
        h = (len(xs) - 1) * p
        lo = int(math.floor(h))
        assert got == pytest.approx(xs[lo] + (h - lo) * (xs[lo + 1] - xs[lo]), abs=1e-12)
    assert s.lo[0, 0] == pytest.approx(0.25975)


def test_quantile_mode_needs_draws():
    with pytest.raises(ValueError, match="100 draws"):
        summarize_draws(np.zeros((99, 3)), ["a", "b", "c"])
    summarize_draws(np.zeros((5, 3)), ["a", "b", "c"], interval="normal")


def test_ranks_permutation_ties_and_rescale(rng):
    draws = rng.normal(size=(150, 6, 3))
    draws[:, 2] = draws[:, 4] = 0.5  # tie
    s = summarize_draws(draws, [str(j) for j in range(6)])
    for r in range(3):
        assert sorted(s.rank[:, r]) == list(range(1, 7))
    assert s.rank[2, 0] + 1 == s.rank[4, 0]  # tie broken by school order
    t = summarize_draws(3.7 * draws, [str(j) for j in range(6)])
    np.testing.assert_array_equal(s.rank, t.rank)


def test_summary_from_chain(small_data, null_design, rng):
    chain = fake_chain(null_design, rng, J=small_data.J)
    s = summarize_school_effects(chain)
    assert s.mean.shape == (small_data.J, 3)
    np.testing.assert_allclose(s.mean, chain.u.mean(axis=0))


# ---------------------------------------------------------- correlations


def test_correlation_target_value():
    cov = np.array([[0.192, -0.0503], [-0.0503, 0.050]])
    corr = correlation_draws(cov[None])[0]
    assert corr[0, 1] == pytest.approx(-0.0503 / math.sqrt(0.192 * 0.050))
    assert corr[0, 1] == pytest.approx(-0.513, abs=5e-4)


def test_correlation_diagonal_and_unit_diagonal(rng):
    assert np.all(correlation_draws(np.diag([2.0, 3.0, 0.1])[None])[0] == np.eye(3))
    A = rng.normal(size=(50, 3, 3))
    cov = A @ A.transpose(0, 2, 1)
    corr = correlation_draws(cov)
    assert np.all(np.diagonal(corr, axis1=1, axis2=2) == 1.0)
    assert np.all(np.abs(corr) <= 1.0)
    np.testing.assert_array_equal(corr, corr.transpose(0, 2, 1))


def test_correlations_are_averaged_per_draw(null_design, rng):
    chain = fake_chain(null_design, rng)
    corr_u, corr_e = school_correlations(chain)
    expected = np.mean(chain.sigma_e[:, 0, 1] / np.sqrt(chain.sigma_e[:, 0, 0] * chain.sigma_e[:, 1, 1]))
    assert corr_e[0, 1] == pytest.approx(expected)
    np.testing.assert_allclose(corr_u, np.eye(3))
