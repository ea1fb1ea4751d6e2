"""Orchestration of the four-phase procedure: Phase 0 tuning, per-chain
IRO convergence, burn-in at the frozen fixed point, and per-chain debiased
inference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import lasso
from .debias import DebiasedFit, debias, nodewise_theta
from .imputation import RefitDraws, SweepWorkspace, TRUNC_K
from .survival import (
    BaselineHazard,
    CompletedMatrix,
    CoxCache,
    SurvivalDataset,
    breslow,
    information_matrix,
    observed_hessian,
)


class ChainNotConvergedWarning(UserWarning):
    """Phase 1 hit the outer-iteration cap before the increment tolerance."""


@dataclass
class TuningConfig:
    lambda_n: float
    ridge_lambda: float
    gamma_n: float
    qp_multiplier: float = 0.5
    cv_folds: int = 5
    ridge_grid: np.ndarray | None = None
    ridge_b: float = 0.1

    def __post_init__(self):
        if min(self.lambda_n, self.gamma_n, self.qp_multiplier) <= 0:
            raise ValueError("tuning constants must be positive")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")


@dataclass
class ChainSchedule:
    s_in: int
    t0: int
    epsilon: float = 1e-3
    max_outer: int = 50

    @classmethod
    def default_for(cls, n: int, p: int, epsilon: float = 1e-3,
                    max_outer: int = 50) -> "ChainSchedule":
        lnp = math.log(n * p)
        return cls(
            s_in=max(5, math.ceil(lnp)),
            t0=max(20, math.ceil(3 * lnp)),
            epsilon=epsilon,
            max_outer=max_outer,
        )


@dataclass
class ChainResult:
    beta_star: np.ndarray
    hazard_star: BaselineHazard
    completed: CompletedMatrix
    debiased: DebiasedFit
    outer_iterations: int
    converged: bool


def gamma_from_rate(p: int, n: int, multiplier: float = 0.5) -> float:
    """gamma_n = a sqrt(log p / n); log floored at log 2 so p=1 stays usable."""
    return multiplier * math.sqrt(math.log(max(p, 2)) / n)


def ridge_from_b(b: float, p: int, n: int) -> float:
    return b * p * math.log(max(p, 2)) / n


def initialize_missing(data: SurvivalDataset, rng) -> CompletedMatrix:
    """Fill each missing cell with a random draw from the column's observed
    values; continuous draws are clipped into the proposal truncation range."""
    values = data.covariates.copy()
    for j in data.missing_columns():
        obs = data.mask[:, j]
        pool = data.covariates[obs, j]
        if pool.size == 0:
            raise ValueError(f"column {j} has no observed values at all")
        mis = np.flatnonzero(~obs)
        draws = rng.choice(pool, size=mis.size, replace=True)
        if not data.kinds[j].is_discrete:
            draws = np.clip(draws, -TRUNC_K, TRUNC_K)
        values[mis, j] = draws
    return CompletedMatrix(values, data.mask)


def _increment(beta_new, beta_old, haz_new: BaselineHazard,
               haz_old: BaselineHazard) -> float:
    return float(np.abs(beta_new - beta_old).sum()) + haz_new.sup_distance(haz_old)


def run_iro_fixed_point(data: SurvivalDataset, lambda_n: float,
                        ridge_lambda: float, schedule: ChainSchedule, rng,
                        workspace: SweepWorkspace | None = None,
                        cache: CoxCache | None = None):
    """Phase-1 loop: alternate S_in SMC-FCS sweeps with lasso + Breslow
    refits until the joint increment drops below epsilon or the cap is hit.

    Returns (beta_star, hazard_star, workspace, outer_iterations, converged).
    """
    cache = cache or CoxCache(data.times, data.events)
    if workspace is None:
        init = initialize_missing(data, rng)
        workspace = SweepWorkspace(data, init.values)
    policy = RefitDraws(ridge_lambda)

    fit = lasso.fit(workspace.x, data, lambda_n, cache=cache)
    beta = fit.beta
    hazard = breslow(beta, workspace.x, data, cache=cache)
    converged = False
    outer = 0
    for outer in range(1, schedule.max_outer + 1):
        workspace.run_sweeps(schedule.s_in, beta, hazard, rng, policy)
        workspace.refresh()
        fit = lasso.fit(workspace.x, data, lambda_n, init=beta, cache=cache)
        hazard_new = breslow(fit.beta, workspace.x, data, cache=cache)
        inc = _increment(fit.beta, beta, hazard_new, hazard)
        beta, hazard = fit.beta, hazard_new
        if inc < schedule.epsilon:
            converged = True
            break
    if not converged:
        warnings.warn("IRO loop hit max_outer before tolerance",
                      ChainNotConvergedWarning)
    return beta, hazard, workspace, outer, converged


def phase0_tune(data: SurvivalDataset, rng, *, b0: float = 0.1,
                qp_multiplier: float = 0.5, cv_folds: int = 5,
                n_lambdas: int = 30, ridge_grid_size: int = 15,
                schedule: ChainSchedule | None = None,
                ridge_rule: str = "algorithm1") -> TuningConfig:
    """Phase 0: preliminary IRO at nominal ridge b0, lambda_n by CV on the
    resulting completed matrix, ridge multiplier b by held-out MSE for the
    first incomplete covariate, then gamma_n = a sqrt(log p / n).

    The preliminary completed data are discarded.
    """
    if data.n_events == 0:
        raise ValueError("need at least one event")
    n, p = data.n, data.p
    schedule = schedule or ChainSchedule.default_for(n, p)
    cache = CoxCache(data.times, data.events)
    mcols = data.missing_columns()

    init = initialize_missing(data, rng)
    if mcols.size:
        lam_prelim = lasso.cv_select_lambda(
            init.values, data, cv_folds,
            lasso.default_grid(init.values, data, n_lambdas), rng)
        _, _, ws, _, _ = run_iro_fixed_point(
            data, lam_prelim, ridge_from_b(b0, p, n), schedule, rng,
            workspace=SweepWorkspace(data, init.values), cache=cache)
        x0 = ws.x
    else:
        x0 = init.values

    lambda_n = lasso.cv_select_lambda(
        x0, data, cv_folds, lasso.default_grid(x0, data, n_lambdas), rng)

    grid = np.geomspace(0.01, max(2.0, 20 * math.sqrt(p / n)), ridge_grid_size)
    if mcols.size:
        b_hat = _ridge_b_cv(x0, data, int(mcols[0]), grid, cv_folds, rng)
    else:
        b_hat = b0

    if ridge_rule == "algorithm1":
        ridge_lambda = ridge_from_b(b_hat, p, n)
    elif ridge_rule == "rate":
        ridge_lambda = lambda_n**2 * max(p - 1, 1)
    else:
        raise ValueError(f"unknown ridge rule {ridge_rule!r}")
    return TuningConfig(
        lambda_n=lambda_n,
        ridge_lambda=ridge_lambda,
        gamma_n=gamma_from_rate(p, n, qp_multiplier),
        qp_multiplier=qp_multiplier,
        cv_folds=cv_folds,
        ridge_grid=grid,
        ridge_b=float(b_hat),
    )


def _ridge_b_cv(x0, data: SurvivalDataset, j: int, grid, n_folds: int, rng) -> float:
    """Minimum held-out MSE over the b grid for predicting the genuinely
    observed values of column j from the pseudo-complete predictors."""
    if len(grid) == 1:
        return float(grid[0])
    n, p = data.n, data.p
    obs = np.flatnonzero(data.mask[:, j])
    y = data.covariates[obs, j]
    others = np.arange(p) != j
    z = x0[np.ix_(obs, others)]
    perm = rng.permutation(obs.size)
    folds = np.array_split(perm, n_folds)
    mse = np.zeros(len(grid))
    for f_idx in folds:
        te = np.zeros(obs.size, dtype=bool)
        te[f_idx] = True
        if te.all() or (~te).sum() < 2:
            continue
        z_tr, y_tr = z[~te], y[~te]
        z_te, y_te = z[te], y[te]
        n_tr = z_tr.shape[0]
        zbar = z_tr.mean(axis=0)
        zc = z_tr - zbar
        ybar = y_tr.mean()
        gram = zc.T @ zc / n_tr
        rhs = zc.T @ (y_tr - ybar) / n_tr
        for gi, b in enumerate(grid):
            lam = ridge_from_b(float(b), p, n)
            gam = np.linalg.solve(gram + lam * np.eye(p - 1), rhs)
            pred = ybar + (z_te - zbar) @ gam
            mse[gi] += float(((y_te - pred) ** 2).sum())
    # ties break to the smaller b; argmin returns the first (grid ascends)
    return float(grid[int(np.argmin(mse))])


def run_chain(data: SurvivalDataset, tuning: TuningConfig, m: int,
              schedule: ChainSchedule, rng, *,
              sigma_source: str = "information") -> ChainResult:
    """Phases 1-3 for one inferential chain.

    Independent initialization, IRO convergence, T0 burn-in sweeps at the
    frozen fixed point, then lasso refit, nodewise program at radius gamma_n,
    and the one-step debiased estimate with V = diag(Theta)/n.
    """
    cache = CoxCache(data.times, data.events)
    beta_star, hazard_star, ws, outer, converged = run_iro_fixed_point(
        data, tuning.lambda_n, tuning.ridge_lambda, schedule, rng, cache=cache)

    ws.run_sweeps(schedule.t0, beta_star, hazard_star, rng,
                  RefitDraws(tuning.ridge_lambda))
    ws.refresh()

    fit = lasso.fit(ws.x, data, tuning.lambda_n, init=beta_star, cache=cache)
    if sigma_source == "information":
        sigma = information_matrix(fit.beta, ws.x, data, cache=cache)
    elif sigma_source == "hessian":
        sigma = observed_hessian(fit.beta, ws.x, data, cache=cache)
    else:
        raise ValueError(f"unknown sigma source {sigma_source!r}")
    theta = nodewise_theta(sigma, tuning.gamma_n)
    db = debias(fit, theta, ws.x, data)
    db.sigma_source = sigma_source
    return ChainResult(
        beta_star=beta_star,
        hazard_star=hazard_star,
        completed=ws.completed(),
        debiased=db,
        outer_iterations=outer,
        converged=converged,
    )
