"""Gibbs sampler for the trivariate two-level mixed-response model.

Responses 1 and 2 are continuous; response 3 is binary through a latent
normal propensity ``ystar`` whose residual variance is held at 1. Each sweep
updates, in order: latent propensities, fixed effects, school effects, the
school covariance and finally the residual covariance. The last step draws
an unconstrained inverse-Wishart matrix and rescales the third response so
that ``sigma_e[2, 2] == 1``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr
from scipy.stats import invwishart

from .core import Dataset, DesignBlocks
from .simulate import VARIANCE_FLOOR, anova_variance_estimates
from .truncnorm import sample_sign_truncated

log = logging.getLogger(__name__)

# burn-in and chain length used for the school-characteristics model
PRESET_CHAIN_DEFAULTS = {"cva_school": (2000, 40_000)}


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 500
    iterations: int = 10_000
    thin: int = 1
    seed: int = 0
    prior_df_u: float = 3.0
    prior_df_e: float = 3.0
    prior_scale_u: np.ndarray | None = None  # None: 3 * diag(starting variances)
    prior_scale_e: np.ndarray | None = None
    # "px" rescales an unconstrained draw; "mh" (Metropolis-Hastings on the
    # free entries) is reserved and not implemented
    residual_update: str = "px"

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, iterations >= 1, thin >= 1")
        if self.residual_update == "mh":
            raise NotImplementedError("Metropolis-Hastings residual covariance update is not implemented")
        if self.residual_update != "px":
            raise ValueError(f"unknown residual_update {self.residual_update!r}")

    @property
    def draws(self) -> int:
        return self.iterations // self.thin

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "ChainConfig":
        burn_in, iterations = PRESET_CHAIN_DEFAULTS.get(preset, (500, 10_000))
        kw = {"burn_in": burn_in, "iterations": iterations}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass(eq=False)
class ParameterState:
    beta: list  # three coefficient vectors
    u: np.ndarray  # J x 3
    omega_u: np.ndarray
    sigma_e: np.ndarray
    ystar: np.ndarray  # N
    alpha: float = 1.0  # scale factor applied by the last identification step

    def copy(self) -> "ParameterState":
        return ParameterState(
            beta=[b.copy() for b in self.beta],
            u=self.u.copy(),
            omega_u=self.omega_u.copy(),
            sigma_e=self.sigma_e.copy(),
            ystar=self.ystar.copy(),
            alpha=self.alpha,
        )


class SamplerContext:
    """Data and design quantities that stay fixed over a chain."""

    def __init__(self, data: Dataset, design: DesignBlocks):
        if not data.validated:
            raise SamplerError("dataset is not validated")
        self.y1 = np.asarray(data.y1, dtype=float)
        self.y2 = np.asarray(data.y2, dtype=float)
        self.y3 = np.asarray(data.y3, dtype=np.int64)
        self.positive = self.y3 == 1
        self.X = [np.ascontiguousarray(x, dtype=float) for x in design.X]
        self.names = design.names
        self.p = [x.shape[1] for x in self.X]
        self.offsets = np.concatenate([[0], np.cumsum(self.p)]).astype(int)
        self.xtx = [[self.X[r].T @ self.X[s] for s in range(3)] for r in range(3)]
        self.school = np.asarray(data.school_index, dtype=np.int64)
        self.n_j = np.asarray(data.n_j, dtype=float)
        self.starts = data.school_starts
        self.school_ids = tuple(data.school_ids)
        self.N = data.N
        self.J = data.J

    def targets(self, state: ParameterState) -> np.ndarray:
        return np.column_stack([self.y1, self.y2, state.ystar])

    def linear_predictors(self, state: ParameterState) -> np.ndarray:
        return np.column_stack([self.X[r] @ state.beta[r] for r in range(3)])

    def residuals(self, state: ParameterState) -> np.ndarray:
        return self.targets(state) - self.linear_predictors(state) - state.u[self.school]


def _cholesky(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SamplerError(f"{what} is not positive definite") from None


# ---------------------------------------------------------------- starts


def probit_irls(X, y, max_iter=50, tol=1e-8):
    """Single-level probit fit by iteratively reweighted least squares.

    Returns (beta, converged).
    """
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        p = np.clip(ndtr(eta), 1e-10, 1 - 1e-10)
        dens = np.exp(-0.5 * eta**2) / np.sqrt(2 * np.pi)
        dens = np.maximum(dens, 1e-300)
        w = dens**2 / (p * (1 - p))
        z = eta + (y - p) / dens
        Xw = X * w[:, None]
        try:
            new = np.linalg.solve(X.T @ Xw, Xw.T @ z)
        except np.linalg.LinAlgError:
            return beta, False
        if not np.all(np.isfinite(new)):
            return beta, False
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol:
            return beta, True
    return beta, False


def _ols(X, y):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SamplerError("singular design (collinear columns)")
    return np.linalg.lstsq(X, y, rcond=None)[0]


def initialize_state(data: Dataset, design: DesignBlocks, cfg: ChainConfig | None = None) -> ParameterState:
    """Least-squares / probit starts plus ANOVA variance components."""
    y3 = np.asarray(data.y3)
    if y3.min() == y3.max():
        raise SamplerError("degenerate binary outcome: y3 takes a single value")
    X1, X2, X3 = design.X
    b1 = _ols(X1, data.y1)
    b2 = _ols(X2, data.y2)
    _ols(X3, y3.astype(float))  # rank check
    b3, ok = probit_irls(X3, y3.astype(float))
    if not ok:
        log.warning("probit IRLS did not converge; using scaled least-squares start")
        b3 = 2.5 * _ols(X3, 2.0 * y3 - 1.0)
    g = data.school_index
    su1, se1 = anova_variance_estimates(data.y1 - X1 @ b1, g)
    su2, se2 = anova_variance_estimates(data.y2 - X2 @ b2, g)
    bu, be = anova_variance_estimates(y3.astype(float), g)
    su3 = max(bu / be, VARIANCE_FLOOR)
    return ParameterState(
        beta=[b1, b2, b3],
        u=np.zeros((data.J, 3)),
        omega_u=np.diag([su1, su2, su3]),
        sigma_e=np.diag([se1, se2, 1.0]),
        ystar=np.where(y3 == 1, 0.5, -0.5),
    )


# ---------------------------------------------------------- conditionals


def fixed_effects_posterior(X, xtx, R, sigma_e):
    """Flat-prior conditional of the stacked coefficients.

    ``X`` is a list of per-response design matrices, ``R`` the N x k matrix
    of targets with the random effects removed. Returns (mean, L) with L the
    lower Cholesky factor of the posterior precision.
    """
    k = len(X)
    S_inv = np.linalg.inv(sigma_e)
    W = R @ S_inv
    rhs = np.concatenate([X[r].T @ W[:, r] for r in range(k)])
    prec = np.block([[S_inv[r, s] * xtx[r][s] for s in range(k)] for r in range(k)])
    L = _cholesky(prec, "fixed-effect precision (collinear design?)")
    mean = cho_solve((L, True), rhs)
    return mean, L


def draw_from_precision(mean, L, rng):
    return mean + solve_triangular(L.T, rng.standard_normal(len(mean)), lower=False)


def fixed_effects_conditional(state: ParameterState, ctx: SamplerContext):
    R = ctx.targets(state) - state.u[ctx.school]
    return fixed_effects_posterior(ctx.X, ctx.xtx, R, state.sigma_e)


def school_effects_conditional(state: ParameterState, ctx: SamplerContext):
    """Per-school conditional means (J x 3) and covariances (J x 3 x 3)."""
    resid = ctx.targets(state) - ctx.linear_predictors(state)
    sums = np.add.reduceat(resid, ctx.starts, axis=0)
    S_inv = np.linalg.inv(state.sigma_e)
    O_inv = np.linalg.inv(state.omega_u)
    cov = np.linalg.inv(ctx.n_j[:, None, None] * S_inv + O_inv)
    mean = np.einsum("jab,jb->ja", cov, sums @ S_inv)
    return mean, cov


def latent_conditional(state: ParameterState, ctx: SamplerContext):
    """Mean and variance of each ystar given the two continuous residuals."""
    S = state.sigma_e
    lin = ctx.linear_predictors(state) + state.u[ctx.school]
    e12 = np.column_stack([ctx.y1, ctx.y2]) - lin[:, :2]
    coef = np.linalg.solve(S[:2, :2], S[:2, 2])
    tau2 = S[2, 2] - S[2, :2] @ coef
    if not tau2 > 0:
        raise SamplerError("conditional latent variance <= 0 (sigma_e not positive definite)")
    return lin[:, 2] + e12 @ coef, tau2


# --------------------------------------------------------------- updates


def update_latent_propensities(state, ctx, rng) -> ParameterState:
    mu, tau2 = latent_conditional(state, ctx)
    new = dataclasses.replace(state, ystar=sample_sign_truncated(mu, np.sqrt(tau2), ctx.positive, rng))
    return new


def update_fixed_effects(state, ctx, rng) -> ParameterState:
    mean, L = fixed_effects_conditional(state, ctx)
    b = draw_from_precision(mean, L, rng)
    o = ctx.offsets
    return dataclasses.replace(state, beta=[b[o[r]:o[r + 1]] for r in range(3)])


def update_school_effects(state, ctx, rng) -> ParameterState:
    mean, cov = school_effects_conditional(state, ctx)
    L = _cholesky(cov, "school-effect covariance")
    z = rng.standard_normal(mean.shape)
    return dataclasses.replace(state, u=mean + np.einsum("jab,jb->ja", L, z))


def _prior_scale(given, start):
    if given is not None:
        return np.asarray(given, dtype=float)
    return 3.0 * np.diag(np.diag(start))


def _invwishart(df, scale, rng, what):
    _cholesky(scale, f"{what} scale matrix")
    draw = invwishart.rvs(df=df, scale=scale, random_state=rng)
    return 0.5 * (draw + draw.T)


def update_school_covariance(state, ctx, prior_df, prior_scale, rng) -> ParameterState:
    scale = prior_scale + state.u.T @ state.u
    return dataclasses.replace(state, omega_u=_invwishart(prior_df + ctx.J, scale, rng, "school covariance"))


def rescale_identification(state: ParameterState, sigma_tilde: np.ndarray) -> ParameterState:
    """Rescale the latent response so the residual variance of response 3 is 1.

    The binary likelihood depends on ystar only through its sign, so the
    rescaled state describes the same data.
    """
    s33 = sigma_tilde[2, 2]
    assert s33 > 0, "unconstrained residual variance must be positive"
    alpha = 1.0 / np.sqrt(s33)
    d = np.array([1.0, 1.0, alpha])
    sigma = sigma_tilde * np.outer(d, d)
    sigma[2, 2] = 1.0
    u = state.u.copy()
    u[:, 2] *= alpha
    beta = [state.beta[0], state.beta[1], state.beta[2] * alpha]
    return ParameterState(
        beta=beta,
        u=u,
        omega_u=state.omega_u * np.outer(d, d),
        sigma_e=sigma,
        ystar=state.ystar * alpha,
        alpha=float(alpha),
    )


def update_residual_covariance_constrained(state, ctx, prior_df, prior_scale, rng) -> ParameterState:
    E = ctx.residuals(state)
    sigma_tilde = _invwishart(prior_df + ctx.N, prior_scale + E.T @ E, rng, "residual covariance")
    return rescale_identification(state, sigma_tilde)


# ----------------------------------------------------------------- chain


@dataclass(eq=False)
class ChainResult:
    beta: np.ndarray  # D x P stacked coefficients
    beta_names: tuple  # P pairs (response index, covariate name)
    omega_u: np.ndarray  # D x 3 x 3
    sigma_e: np.ndarray  # D x 3 x 3
    u: np.ndarray  # D x J x 3
    school_ids: tuple
    names: tuple  # per-equation column names
    seed: int
    sweeps: int
    burn_in: int
    iterations: int
    thin: int
    chain_seeds: tuple = field(default=())

    @property
    def draws(self) -> int:
        return self.beta.shape[0]

    def beta_draws(self, r: int) -> np.ndarray:
        cols = [k for k, (rr, _) in enumerate(self.beta_names) if rr == r]
        return self.beta[:, cols]

    def posterior_mean_beta(self) -> list:
        return [self.beta_draws(r).mean(axis=0) for r in range(3)]

    def summaries(self) -> dict:
        """Mean, SD and 2.5%/97.5% quantiles for every stored scalar."""
        out = {}
        for k, (r, name) in enumerate(self.beta_names):
            out[("beta", r, name)] = _summary(self.beta[:, k])
        for label, arr in (("omega_u", self.omega_u), ("sigma_e", self.sigma_e)):
            for r in range(3):
                for s in range(r, 3):
                    out[(label, r, s)] = _summary(arr[:, r, s])
        return out

    @classmethod
    def pool(cls, chains: list["ChainResult"]) -> "ChainResult":
        if len(chains) == 1:
            return chains[0]
        first = chains[0]
        return dataclasses.replace(
            first,
            beta=np.concatenate([c.beta for c in chains]),
            omega_u=np.concatenate([c.omega_u for c in chains]),
            sigma_e=np.concatenate([c.sigma_e for c in chains]),
            u=np.concatenate([c.u for c in chains]),
            sweeps=sum(c.sweeps for c in chains),
            chain_seeds=tuple(c.seed for c in chains),
        )


def _summary(x) -> dict:
    lo, hi = np.quantile(x, [0.025, 0.975])
    return {"mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
            "lo": float(lo), "hi": float(hi)}


def sweep(state, ctx, cfg, prior_u, prior_e, rng, monitor=None, index=0):
    steps = (
        ("latent", lambda s: update_latent_propensities(s, ctx, rng)),
        ("beta", lambda s: update_fixed_effects(s, ctx, rng)),
        ("u", lambda s: update_school_effects(s, ctx, rng)),
        ("omega_u", lambda s: update_school_covariance(s, ctx, cfg.prior_df_u, prior_u, rng)),
        ("sigma_e", lambda s: update_residual_covariance_constrained(s, ctx, cfg.prior_df_e, prior_e, rng)),
    )
    for stage, step in steps:
        try:
            state = step(state)
        except SamplerError as exc:
            raise SamplerError(f"sweep {index}, {stage} update: {exc}") from exc
        if monitor is not None:
            monitor(stage, index, state)
    return state


def run_chain(
    data: Dataset,
    design: DesignBlocks,
    cfg: ChainConfig,
    monitor: Callable | None = None,
    state: ParameterState | None = None,
) -> ChainResult:
    """Run burn-in plus ``cfg.iterations`` sweeps, keeping every ``thin``-th.

    ``monitor(stage, sweep_index, state)`` is called after every update when
    given.
    """
    ctx = SamplerContext(data, design)
    if state is None:
        state = initialize_state(data, design, cfg)
    prior_u = _prior_scale(cfg.prior_scale_u, state.omega_u)
    prior_e = _prior_scale(cfg.prior_scale_e, state.sigma_e)
    rng = np.random.default_rng(cfg.seed)

    D = cfg.draws
    P = int(ctx.offsets[-1])
    beta = np.empty((D, P))
    omega = np.empty((D, 3, 3))
    sigma = np.empty((D, 3, 3))
    u = np.empty((D, ctx.J, 3))
    total = cfg.burn_in + cfg.iterations
    k = 0
    for it in range(total):
        state = sweep(state, ctx, cfg, prior_u, prior_e, rng, monitor, it)
        kept = it - cfg.burn_in + 1
        if kept > 0 and kept % cfg.thin == 0 and k < D:
            beta[k] = np.concatenate(state.beta)
            omega[k] = state.omega_u
            sigma[k] = state.sigma_e
            u[k] = state.u
            k += 1
    beta_names = tuple((r, n) for r in range(3) for n in design.names[r])
    return ChainResult(
        beta=beta,
        beta_names=beta_names,
        omega_u=omega,
        sigma_e=sigma,
        u=u,
        school_ids=ctx.school_ids,
        names=tuple(design.names),
        seed=cfg.seed,
        sweeps=total,
        burn_in=cfg.burn_in,
        iterations=cfg.iterations,
        thin=cfg.thin,
        chain_seeds=(cfg.seed,),
    )


def chain_seeds(seed: int, chains: int) -> list:
    if chains == 1:
        return [seed]
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(chains)]


def run_chains(data, design, cfg: ChainConfig, chains: int = 1) -> list:
    """Independent chains with derived seeds; each is a full ``run_chain``."""
    return [run_chain(data, design, dataclasses.replace(cfg, seed=s)) for s in chain_seeds(cfg.seed, chains)]
