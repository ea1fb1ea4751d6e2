"""Numba-compiled inner loops: weighted-lasso and nodewise-dual coordinate descent.

Both kernels mutate their state arguments in place and are strictly
sequential/cyclic, so results are deterministic functions of the inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cd_pass(xt, w, beta, r, xw2, lam, idx):
    """One coordinate pass over ``idx``; returns the largest step taken."""
    n = xt.shape[1]
    max_delta = 0.0
    for t in range(idx.size):
        j = idx[t]
        if xw2[j] <= 0.0:
            continue
        bj = beta[j]
        num = xw2[j] * bj
        for i in range(n):
            num += w[i] * xt[j, i] * r[i]
        if num > lam:
            bnew = (num - lam) / xw2[j]
        elif num < -lam:
            bnew = (num + lam) / xw2[j]
        else:
            bnew = 0.0
        d = bnew - bj
        if d != 0.0:
            beta[j] = bnew
            for i in range(n):
                r[i] -= d * xt[j, i]
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
    return max_delta


@njit(cache=True)
def wlasso_cd(xt, w, beta, r, xw2, lam, max_sweeps, tol):
    """Coordinate descent for the weighted lasso subproblem.

    Minimizes  0.5 * sum_i w_i (z_i - x_i'beta)^2 + lam * ||beta||_1
    given the current residual r = z - X beta (updated in place alongside
    beta).  xt is X transposed (p, n) and xw2[j] = sum_i w_i x_ij^2.

    Full cyclic passes alternate with passes restricted to the current
    active set; convergence requires a quiet full pass.

    Returns the number of passes performed.
    """
    p = xt.shape[0]
    all_idx = np.arange(p)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = _cd_pass(xt, w, beta, r, xw2, lam, all_idx)
        if max_delta < tol:
            return sweeps
        active = np.flatnonzero(beta)
        if active.size == 0 or active.size == p:
            continue
        while sweeps < max_sweeps:
            sweeps += 1
            max_delta = _cd_pass(xt, w, beta, r, xw2, lam, active)
            if max_delta < tol:
                break
    return sweeps


@njit(cache=True)
def kkt_residual(beta, grad, lam):
    """Max violation of the lasso stationarity conditions."""
    res = 0.0
    for j in range(beta.size):
        if beta[j] > 0.0:
            v = abs(grad[j] + lam)
        elif beta[j] < 0.0:
            v = abs(grad[j] - lam)
        else:
            v = abs(grad[j]) - lam
            if v < 0.0:
                v = 0.0
        if v > res:
            res = v
    return res


@njit(cache=True)
def cox_eta_stats(eta, events_f, group_of, d, n_groups, need_weights):
    """Per-subject score/curvature pieces of the Cox partial likelihood.

    Returns (neg_loglik, g, h), unnormalized; h is meaningful only when
    need_weights.  Risk sets are suffixes over the distinct-time groups and
    the max of eta is subtracted before exponentiation.
    """
    n = eta.size
    m = eta[0]
    for i in range(1, n):
        if eta[i] > m:
            m = eta[i]
    es = np.empty(n)
    for i in range(n):
        es[i] = np.exp(eta[i] - m)
    per_group = np.zeros(n_groups)
    for i in range(n):
        per_group[group_of[i]] += es[i]
    g_suf = np.empty(n_groups)
    acc = 0.0
    for r in range(n_groups - 1, -1, -1):
        acc += per_group[r]
        g_suf[r] = acc
    a_pre = np.empty(n_groups)
    b_pre = np.empty(n_groups)
    acc_a = 0.0
    acc_b = 0.0
    for r in range(n_groups):
        if g_suf[r] > 0.0:
            acc_a += d[r] / g_suf[r]
            acc_b += d[r] / (g_suf[r] * g_suf[r])
        a_pre[r] = acc_a
        b_pre[r] = acc_b
    neg_ll = 0.0
    g = np.empty(n)
    h = np.empty(n) if need_weights else np.empty(0)
    for i in range(n):
        gi = group_of[i]
        ai = es[i] * a_pre[gi]
        g[i] = -(events_f[i] - ai)
        if events_f[i] == 1.0:
            neg_ll -= eta[i] - m - np.log(g_suf[gi])
        if need_weights:
            h[i] = ai - es[i] * es[i] * b_pre[gi]
    return neg_ll, g, h


@njit(cache=True)
def gram_apply_update(x, grams, colsums, c_pos, c_col, memb_c, rows,
                      pos_in_mis, deltas, new_vals):
    """Rank corrections of the per-column observed-row Grams after column
    c_col changes at ``rows`` by ``deltas``, then write the new cells.

    memb_c[jj, t] says whether mis-row t of column c is observed in the
    jj-th tracked column.  The correction for each tracked column is the
    full-row sum minus the few excluded rows (complement trick).
    """
    n_track = grams.shape[0]
    p = x.shape[1]
    m = rows.size
    u_all = np.zeros(p)
    dsum_all = 0.0
    dsq_all = 0.0
    for t in range(m):
        d = deltas[t]
        ri = rows[t]
        dsum_all += d
        dsq_all += d * d
        for k in range(p):
            u_all[k] += d * x[ri, k]
    u = np.empty(p)
    for jj in range(n_track):
        if jj == c_pos:
            continue
        for k in range(p):
            u[k] = u_all[k]
        dsum = dsum_all
        dsq = dsq_all
        for t in range(m):
            if not memb_c[jj, pos_in_mis[t]]:
                d = deltas[t]
                ri = rows[t]
                dsum -= d
                dsq -= d * d
                for k in range(p):
                    u[k] -= d * x[ri, k]
        g = grams[jj]
        for k in range(p):
            g[c_col, k] += u[k]
            g[k, c_col] += u[k]
        g[c_col, c_col] += dsq
        colsums[jj, c_col] += dsum
    for t in range(m):
        x[rows[t], c_col] = new_vals[t]


@njit(cache=True)
def gaussian_visit(gram, colsum, j, n_obs, p_total, lam, sigma2_floor,
                   chi2_draw, xi):
    """Ridge working-model point estimate and Bayes draw from one tracked
    Gram; the chi-square and standard-normal variates are drawn outside.

    Returns (alpha_hat, gamma_hat, sigma2_hat, alpha_star, gamma_star,
    sigma2_star, floored) with slope vectors of length p_total - 1.
    """
    p = gram.shape[0]
    q = p - 1
    idx = np.empty(q, dtype=np.int64)
    w = 0
    for k in range(p):
        if k != j:
            idx[w] = k
            w += 1
    zbar = np.empty(q)
    for a in range(q):
        zbar[a] = colsum[idx[a]] / n_obs
    ybar = colsum[j] / n_obs
    # A = Zc'Zc/n + lam I, rhs = Zc'yc/n
    amat = np.empty((q, q))
    rhs = np.empty(q)
    for a in range(q):
        ia = idx[a]
        for b in range(q):
            amat[a, b] = gram[ia, idx[b]] / n_obs - zbar[a] * zbar[b]
        amat[a, a] += lam
        rhs[a] = gram[ia, j] / n_obs - zbar[a] * ybar
    ycty = gram[j, j] - n_obs * ybar * ybar

    gamma_hat = np.zeros(q)
    low = np.zeros((q, q))
    if q > 0:
        low = np.linalg.cholesky(amat)
        # forward then back substitution: A gamma = rhs
        tmp = np.empty(q)
        for i in range(q):
            acc = rhs[i]
            for k in range(i):
                acc -= low[i, k] * tmp[k]
            tmp[i] = acc / low[i, i]
        for i in range(q - 1, -1, -1):
            acc = tmp[i]
            for k in range(i + 1, q):
                acc -= low[k, i] * gamma_hat[k]
            gamma_hat[i] = acc / low[i, i]

    gr = 0.0
    gg = 0.0
    for a in range(q):
        gr += gamma_hat[a] * rhs[a]
        gg += gamma_hat[a] * gamma_hat[a]
    rss = ycty - n_obs * gr - n_obs * lam * gg
    if rss < 0.0:
        rss = 0.0
    df = n_obs - p_total
    if df < 1:
        df = 1
    sigma2_hat = rss / df
    floored = False
    if sigma2_hat < sigma2_floor:
        sigma2_hat = sigma2_floor
        floored = True

    sigma2_star = df * sigma2_hat / chi2_draw
    gamma_star = gamma_hat.copy()
    if q > 0:
        scale = np.sqrt(sigma2_star / n_obs)
        corr = np.empty(q)
        for i in range(q - 1, -1, -1):
            acc = xi[i]
            for k in range(i + 1, q):
                acc -= low[k, i] * corr[k]
            corr[i] = acc / low[i, i]
        for i in range(q):
            gamma_star[i] += scale * corr[i]
    a_hat = ybar
    a_star = ybar
    for i in range(q):
        a_hat -= zbar[i] * gamma_hat[i]
        a_star -= zbar[i] * gamma_star[i]
    return a_hat, gamma_hat, sigma2_hat, a_star, gamma_star, sigma2_star, floored


@njit(cache=True)
def nodewise_dual_cd(s, k, gamma, nu, r, max_sweeps, tol, big):
    """Cyclic CD for the dual of one nodewise row program.

    Minimizes  f(nu) = 0.25 nu'S nu + nu_k + gamma * ||nu||_1
    with r = S nu maintained in place.  Returns a status code:
    0 converged, 1 sweep budget exhausted, 2 diverged (primal infeasible).
    """
    p = s.shape[0]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        max_abs = 0.0
        for i in range(p):
            sii = s[i, i]
            if sii <= 0.0:
                continue
            ci = r[i] - sii * nu[i]
            t = 0.5 * ci
            if i == k:
                t += 1.0
            if t > gamma:
                new = -(t - gamma) * 2.0 / sii
            elif t < -gamma:
                new = -(t + gamma) * 2.0 / sii
            else:
                new = 0.0
            d = new - nu[i]
            if d != 0.0:
                nu[i] = new
                for l in range(p):
                    r[l] += d * s[l, i]
                ad = abs(d)
                if ad > max_delta:
                    max_delta = ad
            a = abs(new)
            if a > max_abs:
                max_abs = a
        if max_abs > big:
            return 2
        if max_delta < tol * (1.0 + max_abs):
            return 0
    return 1
