"""Single-chain convergence diagnostics based on batch means."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIN_DRAWS = 100


@dataclass(frozen=True)
class ScalarDiagnostics:
    name: str
    ess: float
    geweke_z: float
    lag1: float
    degenerate: bool


def _check(draws):
    x = np.asarray(draws, dtype=float).ravel()
    if len(x) < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws, have {len(x)}")
    return x


def batch_means_variance(x) -> float:
    """Batch-means estimate of the asymptotic variance (n * Var(mean)).

    Uses floor(sqrt(n)) batches; trailing draws that do not fill a batch are
    dropped.
    """
    n = len(x)
    nb = int(math.isqrt(n))
    b = n // nb
    means = x[: nb * b].reshape(nb, b).mean(axis=1)
    return b * means.var(ddof=1)


def effective_sample_size(draws) -> tuple[float, bool]:
    """Batch-means ESS clipped to (0, n]; returns (ess, degenerate)."""
    x = _check(draws)
    n = len(x)
    s2 = x.var(ddof=1)
    if not s2 > 0:
        log.warning("constant chain: ESS reported as 1")
        return 1.0, True
    sigma2 = batch_means_variance(x)
    if not sigma2 > 0:
        return float(n), False
    return float(min(max(n * s2 / sigma2, np.finfo(float).tiny), n)), False


def geweke_z(draws, first: float = 0.1, last: float = 0.5) -> tuple[float, bool]:
    """Geweke mean-difference z comparing the first and last windows.

    Returns (z, degenerate); z is nan when either window is constant.
    """
    x = _check(draws)
    if not (0 < first < 1 and 0 < last < 1 and first + last <= 1):
        raise ValueError("windows must be fractions with first + last <= 1")
    n = len(x)
    a = x[: int(n * first)]
    b = x[n - int(n * last):]
    if len(a) < 4 or len(b) < 4:
        raise ValueError("windows too short")
    va = batch_means_variance(a) / len(a)
    vb = batch_means_variance(b) / len(b)
    if not va + vb > 0:
        return float("nan"), True
    return float((a.mean() - b.mean()) / math.sqrt(va + vb)), False


def lag1_autocorrelation(draws) -> float:
    x = np.asarray(draws, dtype=float)
    x = x - x.mean()
    denom = x @ x
    if denom == 0:
        return float("nan")
    return float(x[:-1] @ x[1:] / denom)


def diagnose(name, draws) -> ScalarDiagnostics:
    ess, deg1 = effective_sample_size(draws)
    z, deg2 = geweke_z(draws)
    return ScalarDiagnostics(name, ess, z, lag1_autocorrelation(draws), deg1 or deg2)


def monitored_scalars(chain, n_schools: int = 5, seed: int = 0) -> dict:
    """Covariance entries, coefficients and a few random school effects.

    The fixed (3, 3) residual variance is skipped.
    """
    from .core import RESPONSES

    out = {}
    for k, (r, name) in enumerate(chain.beta_names):
        out[f"beta.{RESPONSES[r]}.{name}"] = chain.beta[:, k]
    for label, arr in (("omega_u", chain.omega_u), ("sigma_e", chain.sigma_e)):
        for r in range(3):
            for s in range(r, 3):
                if label == "sigma_e" and r == s == 2:
                    continue
                out[f"{label}.{r + 1}.{s + 1}"] = arr[:, r, s]
    rng = np.random.default_rng(seed)
    J = len(chain.school_ids)
    for r in range(3):
        for j in sorted(rng.choice(J, size=min(n_schools, J), replace=False)):
            out[f"u.{RESPONSES[r]}.{chain.school_ids[j]}"] = chain.u[:, j, r]
    return out


def diagnose_chain(chain, n_schools: int = 5, seed: int = 0) -> list[ScalarDiagnostics]:
    return [diagnose(k, v) for k, v in monitored_scalars(chain, n_schools, seed).items()]


def export_traces(chain, outdir, n_schools: int = 5, seed: int = 0) -> list[Path]:
    """One CSV per monitored scalar with columns iteration,value."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    first = chain.burn_in + chain.thin
    for name, x in monitored_scalars(chain, n_schools, seed).items():
        path = outdir / f"trace_{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "value"])
            for k, v in enumerate(x):
                w.writerow([first + k * chain.thin, repr(float(v))])
        paths.append(path)
    return paths
