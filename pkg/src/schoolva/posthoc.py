"""Reported statistics computed from a fitted chain.

Standardization divides each response by the square root of its total
variance, fixed-part variance + school variance + student variance, using
posterior means. Shares of that total give the VPC and R-squared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DesignBlocks
from .sampler import ChainResult


@dataclass(frozen=True, eq=False)
class StandardizedTable:
    names: tuple  # per-response covariate names
    coefficients: tuple  # per-response standardized coefficient arrays
    coefficient_sd: tuple
    school_var: np.ndarray  # (3,)
    student_var: np.ndarray
    school_var_sd: np.ndarray
    student_var_sd: np.ndarray
    D: np.ndarray  # scaling denominators
    fixed_var: np.ndarray  # unstandardized fixed-part variance

    @property
    def r_squared(self) -> np.ndarray:
        return self.fixed_var / self.D

    @property
    def vpc(self) -> np.ndarray:
        return np.array([compute_vpc(u, e) for u, e in zip(self.school_var, self.student_var)])


def fixed_part_variance(X, beta) -> float:
    """Population variance over students of the linear predictor."""
    X = np.asarray(X, dtype=float)
    # centre the columns first so an intercept contributes exactly zero
    lin = (X - X.mean(axis=0)) @ np.asarray(beta, dtype=float)
    return float(np.mean(lin**2))


def standardize(beta, X, school_var, student_var, names=None,
                beta_sd=None, school_var_sd=None, student_var_sd=None) -> StandardizedTable:
    """Standardize point estimates for three responses.

    ``X`` may be None for intercept-only responses, which have no fixed-part
    variance.
    """
    fixed = np.array([
        0.0 if x is None else fixed_part_variance(x, b) for x, b in zip(X, beta)
    ])
    su = np.asarray(school_var, dtype=float)
    se = np.asarray(student_var, dtype=float)
    D = fixed + su + se
    assert np.all(D > 0), "total variance must be positive"
    root = np.sqrt(D)
    coefs = tuple(np.asarray(b, dtype=float) / root[r] for r, b in enumerate(beta))
    if beta_sd is None:
        beta_sd = [np.zeros_like(np.asarray(b, dtype=float)) for b in beta]
    sds = tuple(np.asarray(s, dtype=float) / root[r] for r, s in enumerate(beta_sd))
    zeros = np.zeros(len(D))
    return StandardizedTable(
        names=tuple(names) if names is not None else tuple(() for _ in beta),
        coefficients=coefs,
        coefficient_sd=sds,
        school_var=su / D,
        student_var=se / D,
        school_var_sd=(zeros if school_var_sd is None else np.asarray(school_var_sd)) / D,
        student_var_sd=(zeros if student_var_sd is None else np.asarray(student_var_sd)) / D,
        D=D,
        fixed_var=fixed,
    )


def standardize_estimates(chain: ChainResult, design: DesignBlocks, per_draw: bool = False) -> StandardizedTable:
    """Standardized table from posterior means, or per draw when ``per_draw``."""
    su_draws = np.diagonal(chain.omega_u, axis1=1, axis2=2)  # D x 3
    se_draws = np.diagonal(chain.sigma_e, axis1=1, axis2=2)
    betas = [chain.beta_draws(r) for r in range(3)]
    if not per_draw:
        return standardize(
            [b.mean(axis=0) for b in betas],
            design.X,
            su_draws.mean(axis=0),
            se_draws.mean(axis=0),
            names=design.names,
            beta_sd=[b.std(axis=0, ddof=1) for b in betas],
            school_var_sd=su_draws.std(axis=0, ddof=1),
            student_var_sd=se_draws.std(axis=0, ddof=1),
        )
    # fixed-part variance per draw: b' Cov(X) b with the population covariance
    fixed = np.empty_like(su_draws)
    for r in range(3):
        Xc = design.X[r] - design.X[r].mean(axis=0)
        C = Xc.T @ Xc / len(Xc)
        fixed[:, r] = np.einsum("di,ij,dj->d", betas[r], C, betas[r])
    D = fixed + su_draws + se_draws
    coefs = [betas[r] / np.sqrt(D[:, r : r + 1]) for r in range(3)]
    su, se = su_draws / D, se_draws / D
    return StandardizedTable(
        names=tuple(design.names),
        coefficients=tuple(c.mean(axis=0) for c in coefs),
        coefficient_sd=tuple(c.std(axis=0, ddof=1) for c in coefs),
        school_var=su.mean(axis=0),
        student_var=se.mean(axis=0),
        school_var_sd=su.std(axis=0, ddof=1),
        student_var_sd=se.std(axis=0, ddof=1),
        D=D.mean(axis=0),
        # chosen so r_squared is the posterior mean of the per-draw share
        fixed_var=(fixed / D).mean(axis=0) * D.mean(axis=0),
    )


def compute_vpc(sigma_u2: float, sigma_e2: float) -> float:
    if sigma_u2 < 0 or sigma_e2 < 0:
        raise ValueError("variances must be non-negative")
    total = sigma_u2 + sigma_e2
    if total <= 0:
        raise ValueError("VPC undefined when both variances are zero")
    return sigma_u2 / total


def compute_r_squared(chain: ChainResult, design: DesignBlocks) -> np.ndarray:
    return standardize_estimates(chain, design).r_squared


@dataclass(frozen=True, eq=False)
class SchoolEffectSummary:
    school_ids: tuple
    mean: np.ndarray  # J x 3
    sd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rank: np.ndarray  # 1 = lowest mean
    significant: np.ndarray
    interval: str

    @property
    def proportion_significant(self) -> np.ndarray:
        return self.significant.mean(axis=0)


def summarize_draws(draws, school_ids, interval: str = "quantile") -> SchoolEffectSummary:
    """Summarize school-effect draws shaped (D, J) or (D, J, R)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    D = draws.shape[0]
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) if D > 1 else np.zeros_like(mean)
    if interval == "quantile":
        if D < 100:
            raise ValueError(f"quantile intervals need at least 100 draws, have {D}")
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    elif interval == "normal":
        lo, hi = mean - 1.96 * sd, mean + 1.96 * sd
    else:
        raise ValueError(f"unknown interval mode {interval!r}")
    # stable sort: ties keep school-ordinal (ascending id) order
    order = np.argsort(mean, axis=0, kind="stable")
    rank = np.empty_like(order)
    for r in range(mean.shape[1]):
        rank[order[:, r], r] = np.arange(1, mean.shape[0] + 1)
    significant = (lo > 0) | (hi < 0)
    return SchoolEffectSummary(tuple(school_ids), mean, sd, lo, hi, rank, significant, interval)


def summarize_school_effects(chain: ChainResult, interval: str = "quantile") -> SchoolEffectSummary:
    return summarize_draws(chain.u, chain.school_ids, interval)


def correlation_draws(cov: np.ndarray) -> np.ndarray:
    """Per-draw correlation matrices from covariance draws (D x k x k)."""
    cov = np.asarray(cov, dtype=float)
    sd = np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1))
    corr = cov / (sd[..., :, None] * sd[..., None, :])
    corr = np.clip(corr, -1.0, 1.0)
    k = cov.shape[-1]
    corr[..., np.arange(k), np.arange(k)] = 1.0
    return corr


def school_correlations(chain: ChainResult):
    """Posterior-mean correlation matrices (school level, student level)."""
    return correlation_draws(chain.omega_u).mean(axis=0), correlation_draws(chain.sigma_e).mean(axis=0)
