import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from schoolva.ingest import load_join_encode, transform_outcomes
from schoolva.simulate import (
    TrueParameters,
    TruthError,
    anova_variance_estimates,
    conjugate_beta_oracle,
    covariance_from_shares,
    generate_dataset,
    null_model_truth,
)


def _truth(omega, sigma, intercepts, J, n, **kw):
    beta = [{"intercept": b} for b in intercepts]
    return TrueParameters(beta=beta, omega_u=omega, sigma_e=sigma, J=J, n_min=n, n_max=n, **kw)


def test_no_clustering_identity_residuals():
    sim = generate_dataset(_truth(np.zeros((3, 3)), np.eye(3), (3.0, -2.0, 0.0), J=200, n=100), seed=1)
    y = sim.latent
    assert y[:, 0].mean() == pytest.approx(3.0, abs=0.02)
    assert y[:, 0].std() == pytest.approx(1.0, abs=0.02)
    prevalence = np.mean([r["excluded"] for r in sim.student_rows])
    assert prevalence == pytest.approx(0.5, abs=0.01)
    assert np.all(sim.u == 0)


def test_probit_marginal_prevalence():
    omega = np.diag([1.0, 1.0, 0.140])
    truth = _truth(omega, np.eye(3), (0.0, 4.0, -1.173), J=1000, n=100)
    sim = generate_dataset(truth, seed=7)
    prevalence = np.mean([r["excluded"] for r in sim.student_rows])
    expected = norm.cdf(-1.173 / math.sqrt(1.140))
    assert expected == pytest.approx(0.136, abs=5e-4)
    assert prevalence == pytest.approx(expected, abs=0.01)


def test_school_effect_covariance_recovered():
    omega = covariance_from_shares((0.192, 0.050, 0.123), (-0.513, -0.515, 0.401))
    sim = generate_dataset(_truth(omega, np.eye(3), (0, 0, 0), J=10_000, n=1), seed=3)
    emp = np.cov(sim.u, rowvar=False, ddof=0)
    big = np.triu(np.abs(omega) >= 0.05 - 1e-12)
    rel = np.abs(emp - omega)[big] / np.abs(omega)[big]
    assert big.sum() == 5  # three variances and two covariances
    assert rel.max() < 0.03


def test_round_trip_and_determinism(tmp_path):
    truth = null_model_truth(J=12, n=20)
    a = generate_dataset(truth, seed=4).write(tmp_path / "a")
    b = generate_dataset(truth, seed=4).write(tmp_path / "b")
    for key in ("students", "schools", "truth"):
        assert a[key].read_bytes() == b[key].read_bytes()
    data = transform_outcomes(load_join_encode(a["students"], a["schools"]))
    rec = json.loads(a["truth"].read_text())
    assert rec["N"] == data.N == 240
    # students are written in school order, so file order equals dataset order
    y2_true = np.array(rec["realized.y2"])
    k = np.exp(data.y2) - truth.log_offset
    bound = np.log((k + 1 + truth.log_offset) / (k + truth.log_offset))
    assert np.all(np.abs(data.y2 - y2_true) <= bound)
    np.testing.assert_array_equal(data.y1, generate_dataset(truth, seed=4).latent[:, 0])


def test_truth_flat_round_trip():
    truth = null_model_truth()
    again = TrueParameters.from_flat(truth.to_flat())
    np.testing.assert_array_equal(again.omega_u, truth.omega_u)
    np.testing.assert_array_equal(again.sigma_e, truth.sigma_e)
    assert again.beta == truth.beta
    assert again.to_flat() == truth.to_flat()


def test_invalid_truth():
    with pytest.raises(TruthError, match=r"sigma_e\[3,3\]"):
        _truth(np.eye(3), np.diag([1.0, 1.0, 2.0]), (0, 0, 0), J=10, n=5)
    with pytest.raises(TruthError, match="unrecognised"):
        TrueParameters.from_flat({"bogus": 1})
    with pytest.raises(TruthError, match="prevalence"):
        _truth(np.eye(3), np.eye(3), (0, 0, 0), J=10, n=5, prevalence={"female": 1.5})
    with pytest.raises(TruthError, match="unknown covariates"):
        TrueParameters(beta=[{"shoe_size": 1.0}, {}, {}], omega_u=np.eye(3), sigma_e=np.eye(3))


def test_anova_hand_example():
    su, se = anova_variance_estimates([0, 0, 2, 2], [1, 1, 2, 2])
    assert su == pytest.approx(2.0)
    assert se == 1e-4


def test_anova_constant_response():
    assert anova_variance_estimates([3.0] * 6, [1, 1, 2, 2, 3, 3]) == (1e-4, 1e-4)


def test_anova_large_balanced():
    rng = np.random.default_rng(8)
    J, n = 2000, 50
    g = np.repeat(np.arange(J), n)
    y = rng.normal(scale=math.sqrt(0.2), size=J)[g] + rng.normal(scale=math.sqrt(0.8), size=J * n)
    su, se = anova_variance_estimates(y, g)
    assert su == pytest.approx(0.2, rel=0.10)
    assert se == pytest.approx(0.8, rel=0.10)


def test_conjugate_oracle_closed_forms():
    mean, cov = conjugate_beta_oracle([1.0, 2.0, 3.0], np.ones(3), 1.0)
    assert mean[0] == pytest.approx(2.0)
    assert cov[0, 0] == pytest.approx(1 / 3)
    mean, cov = conjugate_beta_oracle([4.2], np.ones(1), 2.5)
    assert (mean[0], cov[0, 0]) == pytest.approx((4.2, 2.5))


def test_conjugate_oracle_duplicated_rows_double_precision():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(6), rng.normal(size=6)])
    y = rng.normal(size=6)
    _, cov1 = conjugate_beta_oracle(y, X, 0.7)
    _, cov2 = conjugate_beta_oracle(np.tile(y, 2), np.vstack([X, X]), 0.7)
    np.testing.assert_allclose(np.linalg.inv(cov2), 2 * np.linalg.inv(cov1), rtol=1e-12)


def test_conjugate_oracle_singular():
    with pytest.raises(np.linalg.LinAlgError):
        conjugate_beta_oracle([1.0, 2.0], np.column_stack([np.ones(2), np.ones(2)]), 1.0)
