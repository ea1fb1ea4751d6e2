"""Working models, MH acceptance, and sweep behavior, checked against
closed-form oracles and the exact two-state stationary distribution."""

import math

import numpy as np
import pytest

from smcdbl.imputation import (
    ImputationFailure,
    ModelParams,
    RefitDraws,
    SigmaFlooredWarning,
    SweepWorkspace,
    WorkingModelDraw,
    _gaussian_from_moments,
    _truncated_normal,
    cox_density,
    fit_discrete_working_model,
    fit_gaussian_working_model,
    mh_accept,
    predict_class_probs,
    smcfcs_sweep,
)
from smcdbl.survival import (
    BaselineHazard,
    CompletedMatrix,
    SurvivalDataset,
    VariableKind,
    breslow,
)

CONT = VariableKind("continuous")
BIN = VariableKind("binary")


def dataset_with_missing(n, p, seed, miss_col=1, miss_rate=0.3, kinds=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    if kinds:
        for j, k in enumerate(kinds):
            if k.is_discrete:
                x[:, j] = rng.integers(0, k.levels, n)
    t = rng.exponential(1 / np.exp(0.5 * x[:, 0]))
    c = rng.exponential(5.0, n)
    mask = np.ones((n, p), bool)
    mask[:, miss_col] = rng.random(n) >= miss_rate
    vals = np.where(mask, x, np.nan)
    data = SurvivalDataset(times=np.minimum(t, c), events=(t <= c).astype(int),
                           covariates=vals, mask=mask,
                           kinds=tuple(kinds) if kinds else ())
    return data, x


# ---------------------------------------------------------------------------
# gaussian working model
# ---------------------------------------------------------------------------


def test_gaussian_constant_predictors_give_zero_slopes():
    n = 40
    rng = np.random.default_rng(0)
    x = np.column_stack([np.full(n, 2.0), rng.standard_normal(n),
                         np.full(n, -1.0)])
    mask = np.ones((n, 3), bool)
    mask[:5, 1] = False
    data = SurvivalDataset(times=np.arange(1.0, n + 1.0),
                           events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask)
    wm = fit_gaussian_working_model(x, data, 1, 0.3, np.random.default_rng(1))
    assert np.allclose(wm.point_estimate.slopes, 0.0, atol=1e-12)
    obs = mask[:, 1]
    y = x[obs, 1]
    df = max(obs.sum() - 3, 1)
    assert wm.point_estimate.sigma2 == pytest.approx(
        np.sum((y - y.mean()) ** 2) / df, rel=1e-10)


def test_gaussian_ols_oracle_single_predictor():
    n = 50
    rng = np.random.default_rng(2)
    z = rng.standard_normal(n)
    y = 1.5 + 0.8 * z + rng.normal(scale=0.3, size=n)
    x = np.column_stack([z, y])
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=x, mask=np.ones((n, 2), bool))
    # make the target column partially missing so the fit has a purpose
    mask = np.ones((n, 2), bool)
    mask[:6, 1] = False
    data = SurvivalDataset(times=data.times, events=data.events,
                           covariates=np.where(mask, x, np.nan), mask=mask)
    wm = fit_gaussian_working_model(x, data, 1, 0.0, np.random.default_rng(3))
    obs = mask[:, 1]
    zc = z[obs] - z[obs].mean()
    slope_ols = float(zc @ y[obs] / (zc @ zc))
    intercept_ols = float(y[obs].mean() - slope_ols * z[obs].mean())
    assert wm.point_estimate.slopes[0] == pytest.approx(slope_ols, rel=1e-10)
    assert wm.point_estimate.intercept == pytest.approx(intercept_ols, rel=1e-10)


def test_gaussian_huge_ridge_shrinks_to_zero():
    data, x = dataset_with_missing(60, 4, seed=4)
    wm = fit_gaussian_working_model(x, data, 1, 1e9, np.random.default_rng(5))
    assert np.linalg.norm(wm.point_estimate.slopes) < 1e-6


def test_gaussian_sigma_floor_warns():
    n = 30
    rng = np.random.default_rng(6)
    z = rng.standard_normal(n)
    x = np.column_stack([z, 2.0 * z])  # exact linear relation
    mask = np.ones((n, 2), bool)
    mask[:4, 1] = False
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask)
    with pytest.warns(SigmaFlooredWarning):
        wm = fit_gaussian_working_model(x, data, 1, 0.0, np.random.default_rng(7))
    assert wm.point_estimate.sigma2 == pytest.approx(1e-12)


def test_gaussian_requires_two_observed():
    data, x = dataset_with_missing(10, 2, seed=8)
    mask = data.mask.copy()
    mask[:, 1] = False
    mask[0, 1] = True
    bad = SurvivalDataset(times=data.times, events=data.events,
                          covariates=np.where(mask, x, np.nan), mask=mask)
    with pytest.raises(ValueError):
        fit_gaussian_working_model(x, bad, 1, 0.1, np.random.default_rng(9))


def test_gaussian_draw_calibration_monte_carlo():
    # lam = 0: gamma* should be centered at gamma_hat with covariance close
    # to sigma2_hat (Z'Z)^{-1} (chi-square inflation df/(df-2) is < 1 MC-SE)
    rng = np.random.default_rng(10)
    n_obs, q = 300, 2
    z = rng.standard_normal((n_obs, q))
    y = z @ np.array([0.7, -0.4]) + rng.normal(scale=0.8, size=n_obs)
    zbar = z.mean(axis=0)
    zc = z - zbar
    yc = y - y.mean()
    moments = (zc.T @ zc, zc.T @ yc, float(yc @ yc), zbar, float(y.mean()),
               n_obs)
    draw_rng = np.random.default_rng(11)
    n_draws = 10000
    draws = np.empty((n_draws, q))
    for i in range(n_draws):
        point, draw = _gaussian_from_moments(*moments, q + 1, 0.0, draw_rng)
        draws[i] = draw.slopes
    gamma_hat = point.slopes
    target_cov = point.sigma2 * np.linalg.inv(zc.T @ zc)
    se_mean = draws.std(axis=0, ddof=1) / math.sqrt(n_draws)
    assert np.all(np.abs(draws.mean(axis=0) - gamma_hat) < 3 * se_mean)
    sample_cov = np.cov(draws.T)
    rel_tol = 3 * math.sqrt(3.0 / n_draws)
    for a in range(q):
        assert sample_cov[a, a] == pytest.approx(target_cov[a, a], rel=rel_tol)


# ---------------------------------------------------------------------------
# discrete working models
# ---------------------------------------------------------------------------


def _binary_dataset(n, seed, miss_rate=0.2):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    logits = -0.3 + 0.9 * z[:, 0] - 0.6 * z[:, 1]
    yb = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(float)
    x = np.column_stack([z, yb])
    kinds = (CONT, CONT, BIN)
    mask = np.ones((n, 3), bool)
    mask[:, 2] = rng.random(n) >= miss_rate
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask,
                           kinds=kinds)
    return data, x


def test_logistic_intercept_only_matches_proportion():
    n = 60
    rng = np.random.default_rng(12)
    yb = (rng.random(n) < 0.3).astype(float)
    x = np.column_stack([np.full(n, 1.7), yb])
    mask = np.ones((n, 2), bool)
    mask[:8, 1] = False
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask,
                           kinds=(CONT, BIN))
    wm = fit_discrete_working_model(x, data, 1, BIN, 0.5, np.random.default_rng(13))
    obs = mask[:, 1]
    probs = predict_class_probs(wm.point_estimate, BIN, np.full((1, 1), 1.7))
    want = np.clip(yb[obs].mean(), 0.01, 0.99)
    assert probs[0, 1] == pytest.approx(want, abs=1e-6)


def test_logistic_huge_ridge_shrinks_slopes():
    data, x = _binary_dataset(150, seed=14)
    wm = fit_discrete_working_model(x, data, 2, BIN, 1e9, np.random.default_rng(15))
    assert np.max(np.abs(wm.point_estimate.slopes)) < 1e-6
    obs = data.mask[:, 2]
    marg = np.clip(x[obs, 2].mean(), 0.01, 0.99)
    probs = predict_class_probs(wm.point_estimate, BIN, x[:1, :2])
    assert probs[0, 1] == pytest.approx(marg, abs=1e-6)


def test_logistic_recovers_generating_coefficients():
    data, x = _binary_dataset(400, seed=16, miss_rate=0.0)
    wm = fit_discrete_working_model(x, data, 2, BIN, 1e-8,
                                    np.random.default_rng(17))
    # asymptotic 2-SE band around the truth
    est = np.r_[wm.point_estimate.intercept, wm.point_estimate.slopes]
    truth = np.array([-0.3, 0.9, -0.6])
    se_approx = 2.8 / math.sqrt(400)
    assert np.all(np.abs(est - truth) < 2 * np.array([1.2, 1.5, 1.5]) * se_approx)


def test_discrete_missing_level_rejected():
    n = 40
    rng = np.random.default_rng(18)
    x = np.column_stack([rng.standard_normal(n), np.ones(n)])
    mask = np.ones((n, 2), bool)
    mask[:5, 1] = False
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask,
                           kinds=(CONT, BIN))
    with pytest.raises(ValueError):
        fit_discrete_working_model(x, data, 1, BIN, 0.1, np.random.default_rng(19))


def test_ordinal_and_multinomial_fit_and_draw():
    n = 300
    rng = np.random.default_rng(20)
    z = rng.standard_normal((n, 1))
    u = 0.8 * z[:, 0]
    # ordinal via latent thresholds
    lat = u + rng.logistic(size=n)
    yo = np.digitize(lat, [-0.5, 0.8]).astype(float)
    kinds_o = (CONT, VariableKind("ordinal", 3))
    x = np.column_stack([z, yo])
    mask = np.ones((n, 2), bool)
    mask[:10, 1] = False
    data = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                           covariates=np.where(mask, x, np.nan), mask=mask,
                           kinds=kinds_o)
    wm = fit_discrete_working_model(x, data, 1, kinds_o[1], 0.01,
                                    np.random.default_rng(21))
    assert np.all(np.diff(wm.point_estimate.thresholds) > 0)
    probs = predict_class_probs(wm.posterior_draw, kinds_o[1], z[:5])
    assert probs.shape == (5, 3)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs >= 0.01 / 3)

    # multinomial: 3 unordered classes
    logits = np.column_stack([0.5 * z[:, 0], -0.7 * z[:, 0]])
    expu = np.exp(np.column_stack([np.zeros(n), logits]))
    pis = expu / expu.sum(axis=1, keepdims=True)
    ym = np.array([rng.choice(3, p=pi) for pi in pis], dtype=float)
    kinds_m = (CONT, VariableKind("categorical", 3))
    xm = np.column_stack([z, ym])
    data_m = SurvivalDataset(times=np.arange(1.0, n + 1), events=np.ones(n, int),
                             covariates=np.where(mask, xm, np.nan), mask=mask,
                             kinds=kinds_m)
    wm_m = fit_discrete_working_model(xm, data_m, 1, kinds_m[1], 0.01,
                                      np.random.default_rng(22))
    probs_m = predict_class_probs(wm_m.posterior_draw, kinds_m[1], z[:5])
    assert probs_m.shape == (5, 3)
    assert np.allclose(probs_m.sum(axis=1), 1.0)


# ---------------------------------------------------------------------------
# cox density and MH acceptance
# ---------------------------------------------------------------------------


def test_cox_density_censored_before_first_jump():
    bh = BaselineHazard(np.array([1.0]), np.array([0.3]))
    assert cox_density(0.5, 0, np.array([2.0]), np.array([1.0]), bh) == 1.0


def test_cox_density_event_direct_substitution():
    # jump 0.1 at the event time, cumulative 0.5 there, x'beta = 0
    bh = BaselineHazard(np.array([0.3, 0.9]), np.array([0.4, 0.1]))
    got = cox_density(0.9, 1, np.array([0.0]), np.array([1.0]), bh)
    assert got == pytest.approx(0.1 * math.exp(-0.5), rel=1e-12)


def test_cox_density_random_matches_formula():
    rng = np.random.default_rng(23)
    bh = BaselineHazard(np.sort(rng.uniform(0.1, 3.0, 4)),
                        rng.uniform(0.05, 0.4, 4))
    for _ in range(20):
        xr = rng.standard_normal(3)
        b = rng.normal(scale=0.5, size=3)
        y = float(rng.uniform(0, 3.5))
        delta = int(rng.random() < 0.5)
        eta = xr @ b
        want = (bh.jump_at(y) * np.exp(eta)) ** delta * np.exp(
            -bh.cumulative(y) * np.exp(eta))
        assert cox_density(y, delta, xr, b, bh) == pytest.approx(want, rel=1e-12)


def test_mh_accept_trivial_cases():
    bh = BaselineHazard(np.array([1.0]), np.array([0.2]))
    xr = np.array([1.0, -0.5])
    b = np.array([0.7, 0.3])
    assert mh_accept(0.4, 0.4, 2.0, 1, xr, 0, b, bh) == 1.0
    assert mh_accept(0.4, 1.7, 0.5, 0, xr, 0, b, bh) == 1.0  # Lam(Y)=0


def test_mh_accept_derived_value():
    bh = BaselineHazard(np.array([0.2, 0.5]), np.array([0.3, 0.2]))
    # cumulative(0.5) = 0.5; p=1, beta=1, x_curr=1, x_star=0, event
    got = mh_accept(1.0, 0.0, 0.5, 1, np.array([1.0]), 0, np.array([1.0]), bh)
    want = min(1.0, math.exp(-1) * math.exp(-0.5 * (1 - math.e)))
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(0.8686, abs=5e-5)


def test_mh_accept_matches_density_ratio():
    rng = np.random.default_rng(24)
    bh = BaselineHazard(np.sort(rng.uniform(0.1, 2.0, 3)),
                        rng.uniform(0.1, 0.5, 3))
    for _ in range(25):
        xr = rng.standard_normal(2)
        b = rng.normal(size=2)
        y = float(rng.choice(np.r_[bh.jump_times, 1.23]))
        delta = int(rng.random() < 0.6)
        if delta == 1 and bh.jump_at(y) == 0.0:
            continue  # density ratio undefined, covered separately
        x_curr, x_star = rng.standard_normal(2)
        r0 = np.array(xr)
        r0[1] = x_curr
        r1 = np.array(xr)
        r1[1] = x_star
        f0 = cox_density(y, delta, r0, b, bh)
        f1 = cox_density(y, delta, r1, b, bh)
        want = min(1.0, f1 / f0)
        got = mh_accept(x_curr, x_star, y, delta, xr, 1, b, bh)
        assert got == pytest.approx(want, rel=1e-10)


def test_mh_accept_jump_factor_cancels():
    # event at a time where this hazard has no jump: densities are both zero
    # but the ratio is defined through the exponential terms alone
    bh = BaselineHazard(np.array([0.5]), np.array([0.4]))
    y = 1.7  # not a jump time; cumulative = 0.4
    b = np.array([1.0])
    got = mh_accept(1.0, 0.3, y, 1, np.array([1.0]), 0, b, bh)
    want = min(1.0, math.exp(0.3 - 1.0) * math.exp(-0.4 * (math.exp(0.3) - math.e)))
    assert got == pytest.approx(want, rel=1e-12)
    assert cox_density(y, 1, np.array([1.0]), b, bh) == 0.0
    # scaling all jumps leaves the jump factor cancelled: acceptance changes
    # only through the cumulative-hazard exponential
    bh2 = BaselineHazard(bh.jump_times, bh.jump_sizes * 3.0)
    got2 = mh_accept(1.0, 0.3, y, 1, np.array([1.0]), 0, b, bh2)
    want2 = min(1.0, math.exp(0.3 - 1.0)
                * math.exp(-1.2 * (math.exp(0.3) - math.e)))
    assert got2 == pytest.approx(want2, rel=1e-12)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_sweep_no_missing_is_identity():
    rng = np.random.default_rng(25)
    x = rng.standard_normal((20, 3))
    data = SurvivalDataset(times=np.arange(1.0, 21), events=np.ones(20, int),
                           covariates=x, mask=np.ones((20, 3), bool))
    bh = breslow(np.zeros(3), x, data)
    cm = CompletedMatrix(x.copy(), data.mask)
    out = smcfcs_sweep(cm, data, np.zeros(3), bh, RefitDraws(0.1),
                       np.random.default_rng(26))
    assert np.array_equal(out.values, x)


def test_sweep_reproducible_and_observed_immutable():
    data, x = dataset_with_missing(80, 4, seed=27)
    from smcdbl.engine import initialize_missing
    init = initialize_missing(data, np.random.default_rng(28))
    beta = np.array([0.5, 0.2, 0.0, -0.1])
    bh = breslow(beta, init.values, data)
    a = smcfcs_sweep(init, data, beta, bh, RefitDraws(0.05),
                     np.random.default_rng(29))
    b = smcfcs_sweep(init, data, beta, bh, RefitDraws(0.05),
                     np.random.default_rng(29))
    assert np.array_equal(a.values, b.values)
    m = data.mask
    assert np.array_equal(a.values[m], data.covariates[m])
    # multiple sweeps stay within the truncation bound
    ws = SweepWorkspace(data, init.values)
    rng = np.random.default_rng(30)
    for _ in range(25):
        ws.sweep(beta, bh, rng, RefitDraws(0.05))
    assert np.all(np.abs(ws.x[~m]) <= 5.0)
    assert np.array_equal(ws.x[m], data.covariates[m])


def test_workspace_matches_public_working_model():
    data, x = dataset_with_missing(60, 5, seed=31)
    from smcdbl.engine import initialize_missing
    init = initialize_missing(data, np.random.default_rng(32))
    ws = SweepWorkspace(data, init.values)
    wm_ws = ws._gaussian_refit(1, 0.07, np.random.default_rng(33))
    wm_pub = fit_gaussian_working_model(init.values, data, 1, 0.07,
                                        np.random.default_rng(33))
    assert np.allclose(wm_ws.point_estimate.slopes,
                       wm_pub.point_estimate.slopes, atol=1e-9)
    assert wm_ws.point_estimate.sigma2 == pytest.approx(
        wm_pub.point_estimate.sigma2, rel=1e-9)
    assert np.allclose(wm_ws.posterior_draw.slopes,
                       wm_pub.posterior_draw.slopes, atol=1e-8)
    assert wm_ws.posterior_draw.intercept == pytest.approx(
        wm_pub.posterior_draw.intercept, abs=1e-8)


def test_truncated_normal_rejection():
    rng = np.random.default_rng(34)
    out = _truncated_normal(np.full(500, 4.0), 2.0, rng)
    assert np.all((out >= -5.0) & (out <= 5.0))
    with pytest.raises(ImputationFailure):
        _truncated_normal(np.array([80.0]), 0.5, rng, max_tries=50)


def test_sweep_stalled_proposals_raise():
    data, x = dataset_with_missing(40, 3, seed=35)
    from smcdbl.engine import initialize_missing
    init = initialize_missing(data, np.random.default_rng(36))
    bh = breslow(np.zeros(3), init.values, data)
    frozen = {1: WorkingModelDraw(
        "gaussian", 1, 0.0,
        ModelParams(intercept=50.0, slopes=np.zeros(2), sigma2=1e-4),
        ModelParams(intercept=50.0, slopes=np.zeros(2), sigma2=1e-4))}
    with pytest.raises(ImputationFailure):
        smcfcs_sweep(init, data, np.zeros(3), bh, frozen,
                     np.random.default_rng(37))


# ---------------------------------------------------------------------------
# discrete-state stationarity oracle
# ---------------------------------------------------------------------------


def binary_cell_problem():
    """One missing binary cell; everything else fixed and observed."""
    times = np.array([1.0, 2.0, 3.0, 4.0])
    events = np.array([1, 1, 0, 1])
    x = np.array([[0.5, 1.0],
                  [-0.3, 0.0],
                  [0.8, 1.0],
                  [0.2, 0.0]])
    mask = np.ones((4, 2), bool)
    mask[1, 1] = False  # subject 1, binary column 1
    kinds = (CONT, BIN)
    data = SurvivalDataset(times=times, events=events,
                           covariates=np.where(mask, x, np.nan), mask=mask,
                           kinds=kinds)
    beta = np.array([0.7, 0.9])
    completed = x.copy()
    bh = breslow(beta, completed, data)
    # frozen binary working draw: q(1 | z) = expit(0.2 + 0.5 z)
    params = ModelParams(intercept=0.2, slopes=np.array([0.5]))
    frozen = {1: WorkingModelDraw("binary", 1, 0.0, params, params)}
    return data, completed, beta, bh, frozen


def exact_two_state_stationary(data, beta, bh, frozen):
    i0 = 1
    z = np.array([[data.covariates[i0, 0]]])
    probs = predict_class_probs(frozen[1].posterior_draw, BIN, z)[0]
    q = {0.0: probs[0], 1.0: probs[1]}
    f = {}
    for v in (0.0, 1.0):
        row = np.array([data.covariates[i0, 0], v])
        f[v] = cox_density(data.times[i0], int(data.events[i0]), row, beta, bh)
    # transition matrix of the independence-proposal MH kernel
    p01 = q[1.0] * min(1.0, f[1.0] / f[0.0])
    p10 = q[0.0] * min(1.0, f[0.0] / f[1.0])
    pi1 = p01 / (p01 + p10)
    target1 = q[1.0] * f[1.0] / (q[0.0] * f[0.0] + q[1.0] * f[1.0])
    return pi1, target1


def test_binary_cell_exact_stationary_distribution():
    data, completed, beta, bh, frozen = binary_cell_problem()
    pi1, target1 = exact_two_state_stationary(data, beta, bh, frozen)
    assert pi1 == pytest.approx(target1, abs=1e-10)


def test_binary_cell_empirical_frequencies():
    data, completed, beta, bh, frozen = binary_cell_problem()
    _, target1 = exact_two_state_stationary(data, beta, bh, frozen)
    ws = SweepWorkspace(data, completed)
    rng = np.random.default_rng(38)
    n_sweeps = 100000
    count1 = 0
    lam_y = bh.cumulative(data.times)
    for _ in range(n_sweeps):
        ws.sweep(beta, bh, rng, frozen, lam_y=lam_y)
        count1 += ws.x[1, 1] == 1.0
    freq1 = count1 / n_sweeps
    assert abs(freq1 - target1) < 0.01  # total variation on two states
