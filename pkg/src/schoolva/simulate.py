"""Synthetic data from the trivariate model, plus small closed-form oracles.

The truth file is a flat JSON map with dotted keys:

    J, n_min, n_max, log_offset, prior_absences_mean
    beta.<r>.<covariate>          r in 1..3, covariate or "intercept"
    omega_u.<r>.<s>, sigma_e.<r>.<s>   covariance entries (r <= s)
    prevalence.<binary>           prior_excluded, summer_born, female, eal, sen, fsm, religious
    prob.<group>.<level>          ethnicity, school_type, admissions, school_gender

Generated truth files add ``seed``, ``N`` and ``realized.*`` keys holding the
drawn school effects and the pre-rounding log absences.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SCHOOL_COVARIATES, STUDENT_COVARIATES, Dataset
from .ingest import ETHNICITIES, SCHOOL_CATEGORIES, SCHOOL_HEADER, STUDENT_HEADER, encode

VARIANCE_FLOOR = 1e-4

DEFAULT_PREVALENCE = {
    "prior_excluded": 0.0062,
    "summer_born": 0.4225,
    "female": 0.4857,
    "eal": 0.1455,
    "sen": 0.1279,
    "fsm": 0.2626,
    "religious": 0.19,
}
DEFAULT_PROBS = {
    "ethnicity": {"white": 0.7692, "black": 0.0566, "asian": 0.1075, "mixed": 0.0462, "other": 0.0205},
    "school_type": {"community": 0.31, "academy": 0.4367, "sponsored": 0.24, "studio_utc": 0.0133},
    "admissions": {"comprehensive": 0.91, "grammar": 0.05, "secondary_modern": 0.04},
    "school_gender": {"mixed": 0.88, "boys": 0.0667, "girls": 0.0533},
}


class TruthError(ValueError):
    pass


@dataclass
class TrueParameters:
    beta: list  # three dicts covariate -> coefficient, "intercept" included
    omega_u: np.ndarray
    sigma_e: np.ndarray
    J: int = 100
    n_min: int = 50
    n_max: int = 50
    log_offset: float = 1.0
    prior_absences_mean: float = 15.0
    prevalence: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCE))
    probs: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_PROBS.items()})

    def __post_init__(self):
        self.omega_u = np.asarray(self.omega_u, dtype=float)
        self.sigma_e = np.asarray(self.sigma_e, dtype=float)
        self.validate()

    def validate(self):
        for name, m in (("omega_u", self.omega_u), ("sigma_e", self.sigma_e)):
            if m.shape != (3, 3) or not np.allclose(m, m.T):
                raise TruthError(f"{name} must be a symmetric 3x3 matrix")
        # all-zero school covariance is allowed (no clustering)
        if np.any(self.omega_u) and np.linalg.eigvalsh(self.omega_u).min() < 0:
            raise TruthError("omega_u is not positive semi-definite")
        if np.linalg.eigvalsh(self.sigma_e).min() <= 0:
            raise TruthError("sigma_e is not positive definite")
        if self.sigma_e[2, 2] != 1.0:
            raise TruthError("sigma_e[3,3] must equal 1")
        if len(self.beta) != 3:
            raise TruthError("beta needs one entry per equation")
        known = {"intercept", *STUDENT_COVARIATES, *SCHOOL_COVARIATES}
        for b in self.beta:
            bad = set(b) - known
            if bad:
                raise TruthError(f"unknown covariates in beta: {sorted(bad)}")
        if self.J < 2 or not 1 <= self.n_min <= self.n_max:
            raise TruthError("need J >= 2 and 1 <= n_min <= n_max")
        for k, p in self.prevalence.items():
            if not 0 <= p <= 1:
                raise TruthError(f"prevalence.{k} outside [0, 1]")
        for group, levels in self.probs.items():
            if any(p < 0 for p in levels.values()) or not math.isclose(sum(levels.values()), 1.0, abs_tol=1e-6):
                raise TruthError(f"prob.{group} must be non-negative and sum to 1")

    @classmethod
    def from_flat(cls, flat: dict) -> "TrueParameters":
        beta = [{}, {}, {}]
        om = np.zeros((3, 3))
        se = np.zeros((3, 3))
        se[2, 2] = 1.0
        prevalence = dict(DEFAULT_PREVALENCE)
        probs = {k: dict(v) for k, v in DEFAULT_PROBS.items()}
        kw = {}
        for key, value in flat.items():
            parts = key.split(".")
            if parts[0] == "beta" and len(parts) == 3:
                beta[int(parts[1]) - 1][parts[2]] = float(value)
            elif parts[0] in ("omega_u", "sigma_e") and len(parts) == 3:
                r, s = int(parts[1]) - 1, int(parts[2]) - 1
                m = om if parts[0] == "omega_u" else se
                m[r, s] = m[s, r] = float(value)
            elif parts[0] == "prevalence" and len(parts) == 2:
                prevalence[parts[1]] = float(value)
            elif parts[0] == "prob" and len(parts) == 3:
                probs.setdefault(parts[1], {})[parts[2]] = float(value)
            elif key in ("J", "n_min", "n_max"):
                kw[key] = int(value)
            elif key == "n":
                kw["n_min"] = kw["n_max"] = int(value)
            elif key in ("log_offset", "prior_absences_mean"):
                kw[key] = float(value)
            elif key in ("seed", "N") or parts[0] == "realized":
                continue
            else:
                raise TruthError(f"unrecognised truth key {key!r}")
        return cls(beta=beta, omega_u=om, sigma_e=se, prevalence=prevalence, probs=probs, **kw)

    def to_flat(self) -> dict:
        flat = {
            "J": self.J,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "log_offset": self.log_offset,
            "prior_absences_mean": self.prior_absences_mean,
        }
        for r, b in enumerate(self.beta, start=1):
            for name, v in b.items():
                flat[f"beta.{r}.{name}"] = float(v)
        for r in range(3):
            for s in range(r, 3):
                flat[f"omega_u.{r + 1}.{s + 1}"] = float(self.omega_u[r, s])
                flat[f"sigma_e.{r + 1}.{s + 1}"] = float(self.sigma_e[r, s])
        for k, v in self.prevalence.items():
            flat[f"prevalence.{k}"] = float(v)
        for group, levels in self.probs.items():
            for level, p in levels.items():
                flat[f"prob.{group}.{level}"] = float(p)
        return flat

    def coefficient(self, r: int, name: str) -> float:
        return float(self.beta[r].get(name, 0.0))


def covariance_from_shares(variances, correlations) -> np.ndarray:
    """3x3 covariance from variances and (rho12, rho13, rho23)."""
    sd = np.sqrt(np.asarray(variances, dtype=float))
    r12, r13, r23 = correlations
    corr = np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    return corr * np.outer(sd, sd)


def null_model_truth(J=100, n=50) -> TrueParameters:
    """Intercept-only truth with realistic variance components and correlations."""
    omega = covariance_from_shares((70.761, 0.046, 0.140), (-0.513, -0.515, 0.401))
    sigma = covariance_from_shares((297.752, 0.877, 1.0), (-0.390, -0.501, 0.397))
    sigma[2, 2] = 1.0
    beta = [{"intercept": 47.018}, {"intercept": 4.100}, {"intercept": -1.173}]
    return TrueParameters(beta=beta, omega_u=omega, sigma_e=sigma, J=J, n_min=n, n_max=n)


@dataclass(eq=False)
class SimulatedData:
    truth: TrueParameters
    seed: int
    student_rows: list  # dicts in the students.csv schema
    school_rows: list
    u: np.ndarray  # J x 3 drawn school effects
    latent: np.ndarray  # N x 3: y1, pre-rounding y2, y3*

    def truth_record(self) -> dict:
        flat = self.truth.to_flat()
        flat["seed"] = int(self.seed)
        flat["N"] = len(self.student_rows)
        for r in range(3):
            flat[f"realized.u.{r + 1}"] = self.u[:, r].tolist()
        flat["realized.y2"] = self.latent[:, 1].tolist()
        return flat

    def dataset(self) -> Dataset:
        """Raw (untransformed) dataset, as ingest would read it from disk."""
        srows = [(i + 2, {k: str(v) for k, v in r.items()}) for i, r in enumerate(self.student_rows)]
        crows = [(i + 2, {k: str(v) for k, v in r.items()}) for i, r in enumerate(self.school_rows)]
        return encode(srows, crows)

    def write(self, outdir) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "students": outdir / "students.csv",
            "schools": outdir / "schools.csv",
            "truth": outdir / "truth.json",
        }
        _write_csv(paths["students"], STUDENT_HEADER, self.student_rows)
        _write_csv(paths["schools"], SCHOOL_HEADER, self.school_rows)
        with paths["truth"].open("w", encoding="utf-8") as fh:
            json.dump(self.truth_record(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return paths


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[h] for h in header])


def _categorical(rng, probs: dict, size):
    levels = list(probs)
    p = np.array([probs[k] for k in levels], dtype=float)
    return [levels[k] for k in rng.choice(len(levels), size=size, p=p / p.sum())]


def _fmt(x: float) -> str:
    return repr(float(x))


def generate_dataset(truth: TrueParameters, seed: int) -> SimulatedData:
    """Run the model forward: school effects, covariates, residuals, outcomes."""
    truth.validate()
    rng = np.random.default_rng(seed)
    J = truth.J
    sizes = rng.integers(truth.n_min, truth.n_max + 1, size=J)
    width = len(str(J))
    school_ids = [f"S{j + 1:0{width}d}" for j in range(J)]

    school_rows, school_cov = [], []
    cats = {g: _categorical(rng, truth.probs[g], J) for g in ("school_type", "admissions", "school_gender")}
    religious = rng.uniform(size=J) < truth.prevalence.get("religious", 0.0)
    for j, sid in enumerate(school_ids):
        row = {
            "school_id": sid,
            "school_type": cats["school_type"][j],
            "admissions": cats["admissions"][j],
            "school_gender": cats["school_gender"][j],
            "religious": int(religious[j]),
        }
        cov = {}
        for group, levels in SCHOOL_CATEGORIES.items():
            for d in (d for ds in levels.values() for d in ds):
                cov[d] = 0.0
            for d in levels[str(row[group])]:
                cov[d] = 1.0
        school_rows.append(row)
        school_cov.append(cov)

    if np.any(truth.omega_u):
        u = rng.multivariate_normal(np.zeros(3), truth.omega_u, size=J, method="cholesky")
    else:
        u = np.zeros((J, 3))

    N = int(sizes.sum())
    g = np.repeat(np.arange(J), sizes)
    cov = {"prior_attainment": rng.standard_normal(N)}
    cov["prior_absences"] = rng.poisson(truth.prior_absences_mean, size=N).astype(float)
    for name in ("prior_excluded", "summer_born", "female", "eal", "sen", "fsm"):
        cov[name] = (rng.uniform(size=N) < truth.prevalence.get(name, 0.0)).astype(float)
    ethnicity = _categorical(rng, truth.probs["ethnicity"], N)
    for level in ETHNICITIES[1:]:
        cov[level] = np.array([e == level for e in ethnicity], dtype=float)
    for name in SCHOOL_COVARIATES:
        cov[name] = np.array([school_cov[j][name] for j in range(J)])[g]

    e = rng.multivariate_normal(np.zeros(3), truth.sigma_e, size=N, method="cholesky")
    latent = np.empty((N, 3))
    for r in range(3):
        eta = np.full(N, truth.coefficient(r, "intercept"))
        for name, b in truth.beta[r].items():
            if name != "intercept":
                eta += b * cov[name]
        latent[:, r] = eta + u[g, r] + e[:, r]
    y3 = (latent[:, 2] >= 0).astype(int)
    absences = np.maximum(np.round(np.exp(latent[:, 1])) - truth.log_offset, 0).astype(np.int64)

    width = len(str(N))
    student_rows = []
    for i in range(N):
        student_rows.append(
            {
                "student_id": f"P{i + 1:0{width}d}",
                "school_id": school_ids[g[i]],
                "attainment8": _fmt(latent[i, 0]),
                "total_absences": int(absences[i]),
                "excluded": int(y3[i]),
                "ks2_score": _fmt(cov["prior_attainment"][i]),
                "prior_absences": int(cov["prior_absences"][i]),
                "prior_excluded": int(cov["prior_excluded"][i]),
                "summer_born": int(cov["summer_born"][i]),
                "female": int(cov["female"][i]),
                "ethnicity": ethnicity[i],
                "eal": int(cov["eal"][i]),
                "sen": int(cov["sen"][i]),
                "fsm": int(cov["fsm"][i]),
            }
        )
    return SimulatedData(truth, seed, student_rows, school_rows, u, latent)


def anova_variance_estimates(y, grouping, floor: float = VARIANCE_FLOOR):
    """One-way random-effects ANOVA estimates (between, within).

    Unbalanced groups use the mean group size in place of the exact
    coefficient.
    """
    y = np.asarray(y, dtype=float)
    _, g = np.unique(np.asarray(grouping), return_inverse=True)
    J = g.max() + 1
    if J < 2:
        raise ValueError("need at least two groups")
    n_j = np.bincount(g, minlength=J)
    N = len(y)
    means = np.bincount(g, weights=y, minlength=J) / n_j
    grand = y.mean()
    ssb = np.sum(n_j * (means - grand) ** 2)
    ssw = np.sum((y - means[g]) ** 2)
    msb = ssb / (J - 1)
    msw = ssw / (N - J) if N > J else 0.0
    sigma_e2 = max(msw, floor)
    sigma_u2 = max((msb - msw) / n_j.mean(), floor)
    return sigma_u2, sigma_e2


def conjugate_beta_oracle(y, X, sigma_e):
    """Exact flat-prior posterior of beta for y = X beta + e, e ~ N(0, Sigma).

    ``sigma_e`` is a scalar variance, a length-N vector of variances, or a
    full N x N covariance matrix.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    S = np.asarray(sigma_e, dtype=float)
    if S.ndim == 0:
        S = np.eye(len(y)) * S
    elif S.ndim == 1:
        S = np.diag(S)
    Sinv_X = np.linalg.solve(S, X)
    precision = X.T @ Sinv_X
    if np.linalg.matrix_rank(precision) < X.shape[1]:
        raise np.linalg.LinAlgError("X' Sigma^-1 X is singular")
    cov = np.linalg.inv(precision)
    mean = cov @ (Sinv_X.T @ y)
    return mean, cov
