"""Nodewise programs for the approximate inverse information matrix,
the one-step debiased estimator, and linear-contrast inference.

Each row k of Theta solves

    min_u u' Sigma u   s.t.  || Sigma u - e_k ||_inf <= gamma

on the positive-eigenvalue subspace of Sigma.  The row program is solved
through its Lagrangian dual, which is the unconstrained lasso-type problem

    min_v  1/4 v' S v + v_k + gamma ||v||_1,      S = positive part of Sigma,

with primal recovery u = -P_+ v / 2 (P_+ the projection onto the positive
subspace).  Solved rows are certified against the original Sigma; rows that
cannot be certified (or whose dual diverges, i.e. the primal is infeasible)
fall back to the matching row of (Sigma + gamma I)^{-1} and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._kernels import nodewise_dual_cd
from .lasso import LassoFit
from .survival import SurvivalDataset, as_matrix, partial_likelihood_gradient

QP_SOLVED = "qp_solved"
RIDGE_FALLBACK = "ridge_fallback"

_FEAS_SLACK = 1e-8
_EIG_RTOL = 1e-12


@dataclass
class ThetaHat:
    rows: np.ndarray            # (p, p), row k approximates e_k' Sigma^{-1}
    gamma: float
    feasibility: list           # per-row QP_SOLVED / RIDGE_FALLBACK


@dataclass
class DebiasedFit:
    beta_db: np.ndarray
    theta: ThetaHat
    v_within: np.ndarray        # diag(Theta)/n
    n: int
    sigma_source: str = "information"


def nodewise_theta(sigma, gamma: float, *, dual_tol: float = 1e-12,
                   max_sweeps: int = 200000) -> ThetaHat:
    """Row-by-row constrained inverse of a symmetric PSD matrix."""
    sigma = np.asarray(sigma, dtype=float)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be square")
    if not np.allclose(sigma, sigma.T, rtol=1e-9, atol=1e-11):
        raise ValueError("sigma must be symmetric")
    p = sigma.shape[0]
    evals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    cutoff = max(evals[-1], 0.0) * _EIG_RTOL
    pos = evals > cutoff
    vp = vecs[:, pos]
    s_plus = (vp * evals[pos]) @ vp.T
    s_plus = (s_plus + s_plus.T) / 2.0

    rows = np.zeros((p, p))
    flags = []
    ridge_inv = None
    for k in range(p):
        u, ok = _solve_row(s_plus, vp, sigma, k, gamma, dual_tol, max_sweeps)
        if ok:
            rows[k] = u
            flags.append(QP_SOLVED)
        else:
            if ridge_inv is None:
                ridge_inv = np.linalg.inv(sigma + gamma * np.eye(p))
            rows[k] = ridge_inv[k]
            flags.append(RIDGE_FALLBACK)
    return ThetaHat(rows=rows, gamma=float(gamma), feasibility=flags)


def _solve_row(s_plus, vp, sigma, k, gamma, tol, max_sweeps):
    p = s_plus.shape[0]
    if s_plus[k, k] <= 0.0 and gamma < 1.0:
        return None, False           # e_k orthogonal to the range: infeasible
    ek = np.zeros(p)
    ek[k] = 1.0
    nu = np.zeros(p)
    r = np.zeros(p)
    best = None
    for _chunk in range(40):
        status = nodewise_dual_cd(s_plus, k, gamma, nu, r,
                                  max_sweeps // 40 + 1, tol, 1e12)
        u = -0.5 * (vp @ (vp.T @ nu))
        viol = float(np.max(np.abs(sigma @ u - ek)))
        if viol <= gamma + _FEAS_SLACK:
            best = u
            if status == 0:
                return u, True
        if status in (0, 2):
            break
    if best is not None:
        return best, True
    return None, False


def debias(fit: LassoFit, theta: ThetaHat, x, data: SurvivalDataset) -> DebiasedFit:
    """One-step correction: beta_db = beta_lasso - Theta grad ell_n(beta_lasso)."""
    xm = as_matrix(x)
    p = xm.shape[1]
    if fit.beta.shape != (p,) or theta.rows.shape != (p, p):
        raise ValueError("dimension mismatch between fit, theta and data")
    grad = partial_likelihood_gradient(fit.beta, xm, data)
    beta_db = fit.beta - theta.rows @ grad
    v_within = np.diag(theta.rows) / data.n
    return DebiasedFit(beta_db=beta_db, theta=theta, v_within=v_within, n=data.n)


@dataclass
class ContrastResult:
    estimate: float
    se: float
    z: float
    p_value: float
    ci_lower: float
    ci_upper: float


def _normal_summary(est, var, alpha):
    se = float(np.sqrt(var))
    z = est / se if se > 0 else np.inf * np.sign(est) if est else 0.0
    q = norm.ppf(1 - alpha / 2)
    return ContrastResult(
        estimate=float(est), se=se, z=float(z),
        p_value=float(2 * norm.sf(abs(z))),
        ci_lower=float(est - q * se), ci_upper=float(est + q * se),
    )


def contrast(db, c, alpha: float = 0.05, chains=None) -> ContrastResult:
    """Inference for a linear contrast c'beta.

    For a per-chain DebiasedFit the variance is c' Theta c / n.  For a
    PooledInference, single-coordinate contrasts read the stored diagonal;
    general contrasts need ``chains`` (the per-chain DebiasedFits) so the
    within/between pieces can be recomputed as full quadratic forms.
    """
    c = np.asarray(c, dtype=float)
    if np.linalg.norm(c) == 0:
        raise ValueError("contrast vector must be nonzero")
    if isinstance(db, DebiasedFit):
        if c.shape != db.beta_db.shape:
            raise ValueError("contrast dimension mismatch")
        est = float(c @ db.beta_db)
        var = float(c @ db.theta.rows @ c) / db.n
        return _normal_summary(est, var, alpha)

    # pooled inference
    nz = np.flatnonzero(c)
    if chains is not None:
        fits = [getattr(ch, "debiased", ch) for ch in chains]
        ests = np.array([float(c @ f.beta_db) for f in fits])
        m = len(fits)
        v_w = float(np.mean([c @ f.theta.rows @ c / f.n for f in fits]))
        v_b = float(np.var(ests, ddof=1)) if m > 1 else 0.0
        var = v_w + (1 + 1 / m) * v_b
        return _normal_summary(float(ests.mean()), var, alpha)
    if nz.size == 1:
        k = int(nz[0])
        est = c[k] * db.beta_bar[k]
        var = c[k] ** 2 * db.v_total[k]
        return _normal_summary(float(est), float(var), alpha)
    raise ValueError(
        "general contrasts on pooled output need the per-chain fits"
    )
