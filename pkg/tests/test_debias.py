"""Nodewise programs, the one-step correction, and contrast inference."""

import numpy as np
import pytest

from smcdbl import lasso
from smcdbl.debias import (
    QP_SOLVED,
    RIDGE_FALLBACK,
    DebiasedFit,
    ThetaHat,
    contrast,
    debias,
    nodewise_theta,
)
from smcdbl.survival import SurvivalDataset, information_matrix, partial_likelihood_gradient

from test_lasso import newton_mle, simulated


def grid_qp_oracle(sigma, k, gamma, num=81):
    """Dense lattice search over the feasible box (nonsingular sigma only):
    u = sigma^{-1} v for v in the box e_k +/- gamma."""
    p = sigma.shape[0]
    sinv = np.linalg.inv(sigma)
    offsets = np.linspace(-gamma, gamma, num)
    best_obj, best_u = np.inf, None
    grids = np.meshgrid(*([offsets] * p), indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    ek = np.eye(p)[k]
    for dv in flat:
        u = sinv @ (ek + dv)
        obj = u @ sigma @ u
        if obj < best_obj:
            best_obj, best_u = obj, u
    return best_obj, best_u


def test_identity_matrix_analytic():
    th = nodewise_theta(np.eye(4), 0.1)
    for k in range(4):
        want = np.zeros(4)
        want[k] = 0.9
        assert np.allclose(th.rows[k], want, atol=1e-9)
        assert th.feasibility[k] == QP_SOLVED


def test_diagonal_analytic():
    th = nodewise_theta(np.diag([2.0, 1.0]), 0.1)
    assert np.allclose(th.rows[0], [0.45, 0.0], atol=1e-9)
    assert np.allclose(th.rows[1], [0.0, 0.9], atol=1e-9)


def test_correlated_matches_grid_oracle():
    sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
    th = nodewise_theta(sigma, 0.05)
    obj_oracle, u_oracle = grid_qp_oracle(sigma, 0, 0.05, num=201)
    got = th.rows[0]
    assert np.max(np.abs(got - u_oracle)) < 1e-3
    assert got @ sigma @ got <= obj_oracle + 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_p3_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((6, 3))
    sigma = a.T @ a / 6 + 0.1 * np.eye(3)
    gamma = 0.08
    th = nodewise_theta(sigma, gamma)
    for k in range(3):
        obj_oracle, _ = grid_qp_oracle(sigma, k, gamma, num=41)
        obj = th.rows[k] @ sigma @ th.rows[k]
        assert obj <= obj_oracle + 1e-6
        assert np.max(np.abs(sigma @ th.rows[k] - np.eye(3)[k])) <= gamma + 1e-8


def test_constraint_certified_on_random_psd():
    rng = np.random.default_rng(3)
    for trial in range(5):
        p = rng.integers(2, 7)
        a = rng.standard_normal((p + 3, p))
        sigma = a.T @ a / (p + 3)
        gamma = float(rng.uniform(0.02, 0.3))
        th = nodewise_theta(sigma, gamma)
        for k in range(p):
            if th.feasibility[k] == QP_SOLVED:
                viol = np.max(np.abs(sigma @ th.rows[k] - np.eye(p)[k]))
                assert viol <= gamma + 1e-8


def test_objective_monotone_in_gamma():
    sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
    objs = []
    for g in (0.01, 0.05, 0.1, 0.2, 0.4):
        th = nodewise_theta(sigma, g)
        objs.append(th.rows[1] @ sigma @ th.rows[1])
    assert np.all(np.diff(objs) <= 1e-10)


def test_ridge_fallback_on_infeasible_row():
    sigma = np.array([[1.0, 0.0], [0.0, 0.0]])
    th = nodewise_theta(sigma, 0.1)
    assert th.feasibility == [QP_SOLVED, RIDGE_FALLBACK]
    ridge = np.linalg.inv(sigma + 0.1 * np.eye(2))
    assert np.allclose(th.rows[1], ridge[1])


def test_nodewise_input_validation():
    with pytest.raises(ValueError):
        nodewise_theta(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        nodewise_theta(np.array([[1.0, 0.3], [0.0, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        nodewise_theta(np.ones((2, 3)), 0.1)


# ---------------------------------------------------------------------------
# debias
# ---------------------------------------------------------------------------


def test_debias_fixed_point_at_mle():
    x, data = simulated(150, 3, np.array([0.8, -0.4, 0.2]), seed=20)
    mle = newton_mle(x, data)
    fit = lasso.fit(x, data, 1e-9)
    sigma = information_matrix(fit.beta, x, data)
    th = nodewise_theta(sigma, 0.05)
    db = debias(fit, th, x, data)
    # gradient ~ 0 at (numerically) the MLE, so the correction is tiny
    assert np.max(np.abs(db.beta_db - fit.beta)) < 1e-5
    assert np.max(np.abs(fit.beta - mle)) < 1e-5


def test_debias_identity_matrix_theta():
    x, data = simulated(60, 3, np.array([0.5, 0, 0]), seed=21)
    fit = lasso.fit(x, data, 0.05)
    th = ThetaHat(rows=np.eye(3), gamma=0.1, feasibility=[QP_SOLVED] * 3)
    db = debias(fit, th, x, data)
    g = partial_likelihood_gradient(fit.beta, x, data)
    assert np.allclose(db.beta_db, fit.beta - g, atol=0)
    assert np.allclose(db.v_within, 1.0 / data.n)


def test_debias_identity_recomputation_bitwise():
    x, data = simulated(90, 4, np.array([0.6, -0.6, 0, 0]), seed=22)
    fit = lasso.fit(x, data, 0.03)
    sigma = information_matrix(fit.beta, x, data)
    th = nodewise_theta(sigma, 0.08)
    db = debias(fit, th, x, data)
    again = fit.beta - th.rows @ partial_likelihood_gradient(fit.beta, x, data)
    assert np.array_equal(db.beta_db, again)
    assert np.array_equal(db.v_within, np.diag(th.rows) / data.n)


# ---------------------------------------------------------------------------
# contrasts
# ---------------------------------------------------------------------------


def _toy_fit(p, n, theta_rows):
    beta = np.linspace(0.5, 1.0, p)
    th = ThetaHat(rows=theta_rows, gamma=0.1, feasibility=[QP_SOLVED] * p)
    return DebiasedFit(beta_db=beta, theta=th, v_within=np.diag(theta_rows) / n,
                       n=n)


def test_contrast_unit_vector_matches_componentwise():
    db = _toy_fit(3, 100, np.diag([2.0, 1.0, 0.5]))
    c = np.array([0.0, 1.0, 0.0])
    res = contrast(db, c)
    assert res.estimate == pytest.approx(db.beta_db[1])
    assert res.se == pytest.approx(np.sqrt(db.v_within[1]))
    width = res.ci_upper - res.ci_lower
    from scipy.stats import norm
    assert width == pytest.approx(2 * norm.ppf(0.975) * res.se)


def test_contrast_identity_theta_unit_c():
    db = _toy_fit(4, 400, np.eye(4))
    c = np.array([0.5, 0.5, 0.5, 0.5])  # unit norm
    res = contrast(db, c)
    assert res.se == pytest.approx(1 / np.sqrt(400))


def test_contrast_symmetric_difference_near_zero():
    # augment data with column-swapped twins: the optimum is swap-invariant
    rng = np.random.default_rng(23)
    n, p = 120, 3
    x = rng.standard_normal((n, p))
    t = rng.exponential(1 / np.exp(0.6 * x[:, 0] + 0.6 * x[:, 1]))
    c_ = rng.exponential(8.0, n)
    times = np.minimum(t, c_)
    events = (t <= c_).astype(int)
    x_sw = x[:, [1, 0, 2]]
    x_aug = np.vstack([x, x_sw])
    data = SurvivalDataset(times=np.tile(times, 2), events=np.tile(events, 2),
                           covariates=x_aug, mask=np.ones((2 * n, p), bool))
    fit = lasso.fit(x_aug, data, 0.02)
    sigma = information_matrix(fit.beta, x_aug, data)
    th = nodewise_theta(sigma, 0.05)
    db = debias(fit, th, x_aug, data)
    c = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    res = contrast(db, c)
    assert abs(res.estimate) < 1e-4


def test_contrast_requires_nonzero():
    db = _toy_fit(2, 50, np.eye(2))
    with pytest.raises(ValueError):
        contrast(db, np.zeros(2))


def test_pooled_contrast_paths():
    from smcdbl.pooling import rubin_pool
    rng = np.random.default_rng(24)
    fits = []
    for m in range(4):
        rows = np.eye(3) * (1.0 + 0.1 * m)
        beta = np.array([1.0, 0.5, 0.0]) + rng.normal(scale=0.02, size=3)
        fits.append(DebiasedFit(beta_db=beta, theta=ThetaHat(rows, 0.1,
                                [QP_SOLVED] * 3), v_within=np.diag(rows) / 200,
                                n=200))
    pooled = rubin_pool(fits)
    ek = np.array([1.0, 0.0, 0.0])
    res = contrast(pooled, ek)
    assert res.estimate == pytest.approx(pooled.beta_bar[0])
    assert res.se == pytest.approx(np.sqrt(pooled.v_total[0]))
    # general contrast needs the chains
    c = np.array([1.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        contrast(pooled, c)
    res2 = contrast(pooled, c, chains=fits)
    ests = np.array([f.beta_db @ c for f in fits])
    v_w = np.mean([c @ f.theta.rows @ c / 200 for f in fits])
    v_b = ests.var(ddof=1)
    assert res2.estimate == pytest.approx(ests.mean())
    assert res2.se == pytest.approx(np.sqrt(v_w + (1 + 1 / 4) * v_b))
