"""Working conditional models and the substantive-model-compatible
Metropolis-Hastings update for missing covariate cells.

One sweep visits every partially observed column in ascending index order,
refits and redraws that column's working model from the current completed
data, proposes one value per missing cell from the drawn parameters, and
accepts with the Cox-likelihood ratio

    min{1, f_Cox(Y, Delta | x*, .) / f_Cox(Y, Delta | x_curr, .)}.

The jump factor of the Breslow hazard cancels identically in the ratio (it
never differs between numerator and denominator), so only the exponential
survival terms enter; the implementation works with that cancelled form.

Gaussian proposals are truncated to [-K, K] by resampling from the
untruncated normal; the printed ratio carries no proposal correction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit

from ._kernels import gaussian_visit, gram_apply_update
from .survival import (
    BaselineHazard,
    CompletedMatrix,
    SurvivalDataset,
    VariableKind,
    as_matrix,
)

TRUNC_K = 5.0
PROB_CLIP = 0.01
SIGMA2_FLOOR = 1e-12
MAX_PROPOSAL_TRIES = 1000
NEWTON_MAX_ITER = 100


class ImputationFailure(RuntimeError):
    """A working-model fit or proposal step broke down numerically."""


class SigmaFlooredWarning(UserWarning):
    """Residual variance hit the numerical floor."""


@dataclass
class ModelParams:
    """Coefficient block of one working model.

    gaussian:    intercept (float), slopes (q,), sigma2
    logistic:    intercept (float), slopes (q,)
    ordinal:     thresholds (k-1,) increasing, slopes (q,)
    multinomial: intercept (k-1,), slopes (k-1, q)

    Intercepts/thresholds are on the raw-predictor scale (centering constants
    already folded in), so predictions use the raw covariate rows.
    """

    intercept: object = None
    slopes: np.ndarray = None
    sigma2: float | None = None
    thresholds: np.ndarray | None = None


@dataclass
class WorkingModelDraw:
    kind: str
    column: int
    ridge_lambda: float
    point_estimate: ModelParams
    posterior_draw: ModelParams


class RefitDraws:
    """Production draw policy: refit and redraw at every column visit."""

    def __init__(self, ridge_lambda: float):
        if ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        self.ridge_lambda = float(ridge_lambda)


# ---------------------------------------------------------------------------
# gaussian working model
# ---------------------------------------------------------------------------


def _gaussian_from_moments(zctzc, zcty, ycty, zbar, ybar, n_obs, p_total,
                           ridge_lambda, rng) -> tuple[ModelParams, ModelParams]:
    """Ridge point estimate and Bayes-type draw from centered cross-moments.

    Consumes rng in a fixed order: one chi-square draw, then q standard
    normals, regardless of the path that produced the moments.
    """
    q = zbar.size
    if q > 0:
        a = zctzc / n_obs + ridge_lambda * np.eye(q)
        try:
            low = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ImputationFailure(f"singular working-model Gram: {exc}") from exc
        gamma_hat = cho_solve((low, True), zcty / n_obs)
        rss = float(ycty - 2 * gamma_hat @ zcty + gamma_hat @ zctzc @ gamma_hat)
    else:
        low = None
        gamma_hat = np.zeros(0)
        rss = float(ycty)
    df = max(n_obs - p_total, 1)
    sigma2_hat = max(rss, 0.0) / df
    if sigma2_hat < SIGMA2_FLOOR:
        warnings.warn("residual variance floored", SigmaFlooredWarning)
        sigma2_hat = SIGMA2_FLOOR

    sigma2_star = df * sigma2_hat / rng.chisquare(df)
    xi = rng.standard_normal(q)
    if q > 0:
        gamma_star = gamma_hat + np.sqrt(sigma2_star / n_obs) * solve_triangular(
            low, xi, lower=True, trans="T"
        )
    else:
        gamma_star = gamma_hat
    alpha_hat = float(ybar - zbar @ gamma_hat)
    alpha_star = float(ybar - zbar @ gamma_star)
    point = ModelParams(intercept=alpha_hat, slopes=gamma_hat, sigma2=sigma2_hat)
    draw = ModelParams(intercept=alpha_star, slopes=gamma_star, sigma2=float(sigma2_star))
    return point, draw


def fit_gaussian_working_model(x, data: SurvivalDataset, j: int,
                               ridge_lambda: float, rng) -> WorkingModelDraw:
    """Gaussian working model for column j on its observed rows.

    Point estimate: gamma_hat = (Z'Z/n + lam I)^{-1} Z'y/n on row-centered
    predictors, df = max(n_obs - p, 1).  Draw: sigma2* ~ df sigma2_hat/chi2_df
    and gamma* ~ N(gamma_hat, (sigma2*/n)(Z'Z/n + lam I)^{-1}); the intercept
    is reconstructed from the centering constants.
    """
    xm = as_matrix(x)
    obs = data.mask[:, j]
    n_obs = int(obs.sum())
    if n_obs < 2:
        raise ValueError(f"column {j} has fewer than 2 observed rows")
    y = xm[obs, j]
    others = np.arange(data.p) != j
    z = xm[np.ix_(obs, others)]
    zbar = z.mean(axis=0) if z.shape[1] else np.zeros(0)
    ybar = float(y.mean())
    zc = z - zbar
    yc = y - ybar
    point, draw = _gaussian_from_moments(
        zc.T @ zc, zc.T @ yc, float(yc @ yc), zbar, ybar,
        n_obs, data.p, ridge_lambda, rng,
    )
    return WorkingModelDraw("gaussian", j, float(ridge_lambda), point, draw)


# ---------------------------------------------------------------------------
# discrete working models (ridge-penalized Newton fits + Laplace draws)
# ---------------------------------------------------------------------------


def _laplace_draw(theta_hat, hess, rng):
    """theta* ~ N(theta_hat, H^{-1}) for the regularized observed information."""
    try:
        low = np.linalg.cholesky((hess + hess.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise ImputationFailure(f"non-PD observed information: {exc}") from exc
    xi = rng.standard_normal(theta_hat.size)
    return theta_hat + solve_triangular(low, xi, lower=True, trans="T")


def _newton_loop(theta, value_grad_hess, max_iter=NEWTON_MAX_ITER):
    """Damped Newton with step halving; returns (theta, H, converged)."""
    nll, grad, hess = value_grad_hess(theta)
    converged = False
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(hess + 1e-8 * np.eye(hess.shape[0]), grad)
        t = 1.0
        for _half in range(40):
            cand = theta - t * step
            nll_c, grad_c, hess_c = value_grad_hess(cand)
            if np.isfinite(nll_c) and nll_c <= nll + 1e-12 * max(1.0, abs(nll)):
                break
            t *= 0.5
        theta, nll, grad, hess = cand, nll_c, grad_c, hess_c
        if np.max(np.abs(t * step)) < 1e-10:
            converged = True
            break
    if not converged:
        warnings.warn("working-model Newton hit max_iter", UserWarning)
    return theta, hess, converged


def _fit_logistic(y, zc, n_obs, ridge_lambda):
    q = zc.shape[1]
    d = np.column_stack([np.ones(n_obs), zc])
    pen = n_obs * ridge_lambda * np.diag(np.r_[0.0, np.ones(q)])

    def vgh(theta):
        u = d @ theta
        pi = expit(u)
        with np.errstate(divide="ignore"):
            nll = -float(y @ np.log(np.maximum(pi, 1e-300))
                         + (1 - y) @ np.log(np.maximum(1 - pi, 1e-300)))
        nll += 0.5 * theta @ pen @ theta
        grad = d.T @ (pi - y) + pen @ theta
        w = pi * (1 - pi)
        hess = (d * w[:, None]).T @ d + pen
        return nll, grad, hess

    theta0 = np.zeros(q + 1)
    pbar = min(max(float(y.mean()), 1e-3), 1 - 1e-3)
    theta0[0] = np.log(pbar / (1 - pbar))
    return _newton_loop(theta0, vgh)


def _fit_multinomial(y, zc, n_obs, ridge_lambda, k):
    """Baseline-category logit, classes 1..k-1 against 0; theta row-major."""
    q = zc.shape[1]
    d = np.column_stack([np.ones(n_obs), zc])
    m = k - 1
    dim = m * (q + 1)
    pen_d = np.tile(np.r_[0.0, np.ones(q)], m) * n_obs * ridge_lambda
    ycls = y.astype(int)
    yind = np.zeros((n_obs, m))
    for c in range(1, k):
        yind[:, c - 1] = ycls == c

    def vgh(theta):
        th = theta.reshape(m, q + 1)
        u = d @ th.T                               # (n, m)
        umax = np.maximum(u.max(axis=1), 0.0)
        log_den = umax + np.log(np.exp(-umax) + np.exp(u - umax[:, None]).sum(axis=1))
        pi = np.exp(u - log_den[:, None])          # classes 1..k-1
        nll = -float((u * yind).sum() - log_den.sum())
        nll += 0.5 * float(pen_d @ theta**2)
        grad = ((pi - yind).T @ d).reshape(-1) + pen_d * theta
        hess = np.zeros((dim, dim))
        for a in range(m):
            for b in range(m):
                w = pi[:, a] * ((a == b) - pi[:, b])
                blk = (d * w[:, None]).T @ d
                hess[a * (q + 1):(a + 1) * (q + 1), b * (q + 1):(b + 1) * (q + 1)] = blk
        hess += np.diag(pen_d)
        return nll, grad, hess

    return _newton_loop(np.zeros(dim), vgh)


def _ordinal_nll_grad(theta, y, zc, n_obs, ridge_lambda, k):
    ncut = k - 1
    cuts = theta[:ncut]
    gam = theta[ncut:]
    u = zc @ gam
    hi = np.where(y < k - 1, expit(cuts[np.minimum(y, ncut - 1).astype(int)] - u), 1.0)
    lo = np.where(y > 0, expit(cuts[np.maximum(y - 1, 0).astype(int)] - u), 0.0)
    pi = np.maximum(hi - lo, 1e-300)
    pen = n_obs * ridge_lambda
    nll = -float(np.log(pi).sum()) + 0.5 * pen * float(gam @ gam)

    dhi = hi * (1 - hi) * (y < k - 1)
    dlo = lo * (1 - lo) * (y > 0)
    dnll_du = (dhi - dlo) / pi
    grad_g = zc.T @ dnll_du + pen * gam
    grad_c = np.zeros(ncut)
    for level in range(ncut):
        at_hi = y == level
        at_lo = y == level + 1
        grad_c[level] = -(dhi[at_hi] / pi[at_hi]).sum() + (dlo[at_lo] / pi[at_lo]).sum()
    return nll, np.concatenate([grad_c, grad_g])


def _fit_ordinal(y, zc, n_obs, ridge_lambda, k):
    """Proportional-odds model; Hessian by central differences of the gradient."""
    ncut = k - 1
    q = zc.shape[1]
    yi = y.astype(int)

    def vgh(theta):
        nll, grad = _ordinal_nll_grad(theta, yi, zc, n_obs, ridge_lambda, k)
        if np.any(np.diff(theta[:ncut]) <= 0):
            return np.inf, grad, np.eye(theta.size)
        h = 1e-6
        dim = theta.size
        hess = np.zeros((dim, dim))
        for i in range(dim):
            tp = theta.copy(); tp[i] += h
            tm = theta.copy(); tm[i] -= h
            _, gp = _ordinal_nll_grad(tp, yi, zc, n_obs, ridge_lambda, k)
            _, gm = _ordinal_nll_grad(tm, yi, zc, n_obs, ridge_lambda, k)
            hess[:, i] = (gp - gm) / (2 * h)
        return nll, grad, (hess + hess.T) / 2.0

    cum = np.array([(yi <= level).mean() for level in range(ncut)])
    cum = np.clip(cum, 1e-3, 1 - 1e-3)
    theta0 = np.concatenate([np.log(cum / (1 - cum)), np.zeros(q)])
    return _newton_loop(theta0, vgh)


def _clip_probs(pi):
    """Assumption-style clipping into [eps, 1-eps], renormalized by row."""
    pi = np.clip(pi, PROB_CLIP, 1 - PROB_CLIP)
    return pi / pi.sum(axis=-1, keepdims=True)


def predict_class_probs(draw_params: ModelParams, kind: VariableKind,
                        z_rows: np.ndarray) -> np.ndarray:
    """Clipped class probabilities for raw predictor rows, shape (m, levels)."""
    k = kind.levels
    if kind.kind == "binary":
        p1 = expit(draw_params.intercept + z_rows @ draw_params.slopes)
        probs = np.column_stack([1 - p1, p1])
    elif kind.kind == "ordinal":
        u = z_rows @ draw_params.slopes
        cum = expit(draw_params.thresholds[None, :] - u[:, None])
        cum = np.minimum.accumulate(cum[:, ::-1], axis=1)[:, ::-1]  # keep monotone
        full = np.column_stack([np.zeros(len(u)), cum, np.ones(len(u))])
        probs = np.diff(full, axis=1)
    else:  # multinomial
        u = draw_params.intercept[None, :] + z_rows @ draw_params.slopes.T
        umax = np.maximum(u.max(axis=1), 0.0)
        den = np.exp(-umax) + np.exp(u - umax[:, None]).sum(axis=1)
        pi = np.exp(u - umax[:, None]) / den[:, None]
        probs = np.column_stack([1 - pi.sum(axis=1), pi])
    return _clip_probs(np.maximum(probs, 0.0))


def fit_discrete_working_model(x, data: SurvivalDataset, j: int, kind: VariableKind,
                               ridge_lambda: float, rng) -> WorkingModelDraw:
    """Ridge-penalized logistic / proportional-odds / multinomial-logit fit
    with a Laplace posterior draw centered at the ridge estimator."""
    if not kind.is_discrete:
        raise ValueError("column kind must be discrete")
    xm = as_matrix(x)
    obs = data.mask[:, j]
    n_obs = int(obs.sum())
    y = xm[obs, j]
    missing_levels = np.setdiff1d(kind.level_values(), np.unique(y))
    if missing_levels.size:
        raise ValueError(
            f"column {j}: level(s) {missing_levels.tolist()} never observed"
        )
    others = np.arange(data.p) != j
    z = xm[np.ix_(obs, others)]
    zbar = z.mean(axis=0) if z.shape[1] else np.zeros(0)
    zc = z - zbar

    k = kind.levels
    if kind.kind == "binary":
        theta, hess, _ = _fit_logistic(y, zc, n_obs, ridge_lambda)
        theta_star = _laplace_draw(theta, hess, rng)

        def unpack(th):
            return ModelParams(intercept=float(th[0] - zbar @ th[1:]),
                               slopes=th[1:].copy())
    elif kind.kind == "ordinal":
        theta, hess, _ = _fit_ordinal(y, zc, n_obs, ridge_lambda, k)
        theta_star = _laplace_draw(theta, hess, rng)
        ncut = k - 1

        def unpack(th):
            gam = th[ncut:].copy()
            return ModelParams(thresholds=th[:ncut] + zbar @ gam, slopes=gam)
    else:  # categorical
        theta, hess, _ = _fit_multinomial(y, zc, n_obs, ridge_lambda, k)
        theta_star = _laplace_draw(theta, hess, rng)
        q = zc.shape[1]

        def unpack(th):
            mat = th.reshape(k - 1, q + 1)
            slopes = mat[:, 1:].copy()
            return ModelParams(intercept=mat[:, 0] - slopes @ zbar, slopes=slopes)

    return WorkingModelDraw(kind.kind, j, float(ridge_lambda),
                            unpack(theta), unpack(theta_star))


# ---------------------------------------------------------------------------
# Cox density and MH acceptance
# ---------------------------------------------------------------------------


def cox_density(y: float, delta: int, x_row, beta, hazard: BaselineHazard) -> float:
    """f_Cox(Y, Delta | X) = {dLam(Y) e^{x'b}}^Delta exp(-Lam(Y) e^{x'b}).

    For Delta = 0 the first factor is 1 regardless of the jump (0^0 = 1).
    """
    eta = float(np.asarray(x_row, dtype=float) @ np.asarray(beta, dtype=float))
    lam = hazard.cumulative(y)
    surv = np.exp(-lam * np.exp(eta))
    if delta:
        return float(hazard.jump_at(y) * np.exp(eta) * surv)
    return float(surv)


def mh_accept(x_curr: float, x_star: float, y: float, delta: int, x_row,
              j: int, beta, hazard: BaselineHazard) -> float:
    """Acceptance probability min{1, f_Cox(x*)/f_Cox(x_curr)}.

    The shared Breslow jump factor cancels identically (it does not involve
    the covariate), so the ratio is computed from the exponential terms even
    when Delta = 1 and the jump at Y is zero.
    """
    x_row = np.asarray(x_row, dtype=float)
    beta = np.asarray(beta, dtype=float)
    base = float(x_row @ beta - beta[j] * x_row[j])
    eta_c = base + beta[j] * x_curr
    d_eta = beta[j] * (x_star - x_curr)
    lam = hazard.cumulative(y)
    if d_eta == 0.0:
        return 1.0
    with np.errstate(over="ignore"):
        logr = delta * d_eta - lam * np.exp(eta_c) * np.expm1(d_eta)
    return float(min(1.0, np.exp(min(logr, 0.0))))


def _truncated_normal(mu, sigma, rng, lo=-TRUNC_K, hi=TRUNC_K,
                      max_tries=MAX_PROPOSAL_TRIES):
    """Rejection sampling from N(mu, sigma^2) restricted to [lo, hi]."""
    out = np.empty_like(mu)
    active = np.arange(mu.size)
    sigma = float(sigma)
    for _ in range(max_tries):
        draw = mu[active] + sigma * rng.standard_normal(active.size)
        ok = (draw >= lo) & (draw <= hi)
        out[active[ok]] = draw[ok]
        active = active[~ok]
        if active.size == 0:
            return out
    raise ImputationFailure(
        f"truncated-normal proposal stalled for {active.size} cell(s)"
    )


# ---------------------------------------------------------------------------
# sweep workspace
# ---------------------------------------------------------------------------


class SweepWorkspace:
    """Mutable completed matrix plus incrementally maintained per-column
    observed-row Grams, so each Gaussian working-model refit is a rank
    correction instead of an O(n p^2) recomputation.

    ``refresh()`` rebuilds the Grams from scratch; callers running many
    sweeps should refresh at outer-iteration boundaries to cap float drift.
    """

    def __init__(self, data: SurvivalDataset, values: np.ndarray):
        self.data = data
        self.x = np.array(values, dtype=float)
        if self.x.shape != data.covariates.shape:
            raise ValueError("completed values shape mismatch")
        self.mcols = [int(j) for j in data.missing_columns()]
        self.pos_of = {c: i for i, c in enumerate(self.mcols)}
        self.obs_rows = {j: np.flatnonzero(data.mask[:, j]) for j in self.mcols}
        self.mis_rows = {j: np.flatnonzero(~data.mask[:, j]) for j in self.mcols}
        self.n_obs = {j: self.obs_rows[j].size for j in self.mcols}
        # memb[c][jj, t]: is the t-th mis-row of c observed in the jj-th
        # tracked column?  (row selector for the Gram rank corrections)
        self.memb = {
            c: np.stack([data.mask[self.mis_rows[c], j2] for j2 in self.mcols])
            if self.mcols else np.zeros((0, 0), bool)
            for c in self.mcols
        }
        self._events = data.events.astype(float)
        self._others = {c: np.arange(data.p) != c for c in self.mcols}
        self._gpad = np.zeros(data.p)
        m = len(self.mcols)
        p = data.p
        self.gram_stack = np.zeros((m, p, p))
        self.colsum_stack = np.zeros((m, p))
        self.refresh()

    def refresh(self):
        g_full = self.x.T @ self.x
        total = self.x.sum(axis=0)
        for i, j in enumerate(self.mcols):
            xm = self.x[self.mis_rows[j]]
            self.gram_stack[i] = g_full - xm.T @ xm
            self.colsum_stack[i] = total - xm.sum(axis=0)

    def completed(self) -> CompletedMatrix:
        return CompletedMatrix(self.x.copy(), self.data.mask)

    def gaussian_moments(self, j):
        """Centered cross-moments of column j's working regression."""
        p = self.data.p
        n_obs = self.n_obs[j]
        g = self.gram_stack[self.pos_of[j]]
        s = self.colsum_stack[self.pos_of[j]]
        others = np.arange(p) != j
        ztz = g[np.ix_(others, others)]
        zty = g[others, j]
        yty = g[j, j]
        zbar = s[others] / n_obs
        ybar = s[j] / n_obs
        zctzc = ztz - n_obs * np.outer(zbar, zbar)
        zcty = zty - n_obs * zbar * ybar
        ycty = yty - n_obs * ybar**2
        return zctzc, zcty, float(ycty), zbar, float(ybar), n_obs

    def _gaussian_refit(self, c, ridge_lambda, rng) -> WorkingModelDraw:
        """Fused moments + ridge fit + Bayes draw through the jit kernel."""
        n_obs = self.n_obs[c]
        df = max(n_obs - self.data.p, 1)
        chi2_draw = rng.chisquare(df)
        xi = rng.standard_normal(self.data.p - 1)
        try:
            a_hat, g_hat, s2_hat, a_star, g_star, s2_star, floored = gaussian_visit(
                self.gram_stack[self.pos_of[c]], self.colsum_stack[self.pos_of[c]],
                c, n_obs, self.data.p, ridge_lambda, SIGMA2_FLOOR, chi2_draw, xi)
        except np.linalg.LinAlgError as exc:
            raise ImputationFailure(f"singular working-model Gram: {exc}") from exc
        if floored:
            warnings.warn("residual variance floored", SigmaFlooredWarning)
        return WorkingModelDraw(
            "gaussian", c, float(ridge_lambda),
            ModelParams(intercept=a_hat, slopes=g_hat, sigma2=s2_hat),
            ModelParams(intercept=a_star, slopes=g_star, sigma2=s2_star),
        )

    def sweep(self, beta, hazard: BaselineHazard, rng, draws,
              lam_y: np.ndarray | None = None) -> None:
        """One full SMC-FCS pass over the missing columns, in place."""
        data = self.data
        beta = np.asarray(beta, dtype=float)
        eta = self.x @ beta
        if lam_y is None:
            lam_y = np.asarray(hazard.cumulative(data.times), dtype=float)
        events = self._events

        for c in self.mcols:
            kind = data.kinds[c]
            if isinstance(draws, RefitDraws):
                if kind.is_discrete:
                    wm = fit_discrete_working_model(
                        self.x, data, c, kind, draws.ridge_lambda, rng)
                else:
                    wm = self._gaussian_refit(c, draws.ridge_lambda, rng)
            else:
                wm = draws[c]

            rows = self.mis_rows[c]
            if rows.size == 0:
                continue
            params = wm.posterior_draw
            if wm.kind == "gaussian":
                gpad = self._gpad
                gpad[:c] = params.slopes[:c]
                gpad[c] = 0.0
                gpad[c + 1:] = params.slopes[c:]
                mu = params.intercept + self.x[rows] @ gpad
                if not np.all(np.isfinite(mu)):
                    raise ImputationFailure("non-finite proposal means")
                x_star = _truncated_normal(mu, np.sqrt(params.sigma2), rng)
            else:
                z_rows = self.x[np.ix_(rows, self._others[c])]
                probs = predict_class_probs(params, kind, z_rows)
                cum = np.cumsum(probs, axis=1)
                u = rng.random(rows.size)
                idx = (cum > u[:, None]).argmax(axis=1)
                x_star = kind.level_values()[idx]

            x_curr = self.x[rows, c]
            delta = x_star - x_curr
            with np.errstate(over="ignore", invalid="ignore"):
                logr = (events[rows] * beta[c] * delta
                        - lam_y[rows] * np.exp(eta[rows]) * np.expm1(beta[c] * delta))
            logr = np.where(delta == 0.0, 0.0, logr)
            if np.any(np.isnan(logr)):
                raise ImputationFailure("NaN in acceptance ratio")
            with np.errstate(divide="ignore"):
                accept = np.log(rng.random(rows.size)) < logr
            pos = np.flatnonzero(accept)
            if pos.size:
                gram_apply_update(
                    self.x, self.gram_stack, self.colsum_stack,
                    self.pos_of[c], c, self.memb[c],
                    rows[pos], pos, delta[pos], x_star[pos])
                eta[rows[pos]] += beta[c] * delta[pos]

    def run_sweeps(self, count: int, beta, hazard: BaselineHazard, rng,
                   draws) -> None:
        """``count`` sweeps at fixed (beta, hazard); hazard values cached."""
        lam_y = np.asarray(hazard.cumulative(self.data.times), dtype=float)
        for _ in range(count):
            self.sweep(beta, hazard, rng, draws, lam_y=lam_y)


def smcfcs_sweep(x, data: SurvivalDataset, beta, hazard: BaselineHazard,
                 draws, rng) -> CompletedMatrix:
    """One SMC-FCS sweep over a completed matrix; observed cells untouched.

    ``draws`` is either a RefitDraws policy (refit + redraw per visit) or a
    mapping {column: WorkingModelDraw} of frozen draws.
    """
    xm = as_matrix(x)
    cm = CompletedMatrix(xm.copy(), data.mask)
    cm.check_against(data)
    ws = SweepWorkspace(data, cm.values)
    ws.sweep(beta, hazard, rng, draws)
    return ws.completed()
