"""Rubin's-rules pooling identities."""

import numpy as np
import pytest
from scipy.stats import norm

from smcdbl.debias import QP_SOLVED, DebiasedFit, ThetaHat
from smcdbl.pooling import rubin_pool


def make_fit(beta, v_within, n=100):
    beta = np.asarray(beta, dtype=float)
    v = np.asarray(v_within, dtype=float)
    rows = np.diag(v * n)
    return DebiasedFit(beta_db=beta, theta=ThetaHat(rows, 0.1,
                       [QP_SOLVED] * beta.size), v_within=v, n=n)


def test_hand_arithmetic_example():
    fits = [make_fit([0.9], [0.04]), make_fit([1.1], [0.04])]
    pooled = rubin_pool(fits, alpha=0.05)
    assert pooled.beta_bar[0] == pytest.approx(1.0)
    assert pooled.v_within[0] == pytest.approx(0.04)
    assert pooled.v_between[0] == pytest.approx(0.02)     # ((.1)^2+(.1)^2)/1
    assert pooled.v_total[0] == pytest.approx(0.07)       # 0.04 + 1.5*0.02
    q = norm.ppf(0.975)
    assert pooled.ci_lower[0] == pytest.approx(1.0 - q * np.sqrt(0.07))
    assert pooled.ci_upper[0] == pytest.approx(1.0 + q * np.sqrt(0.07))
    assert pooled.M == 2


def test_identical_chains_have_zero_between_variance():
    fit = make_fit([0.5, -0.2, 0.0], [0.01, 0.02, 0.03])
    pooled = rubin_pool([fit, fit, fit, fit])
    assert np.allclose(pooled.v_between, 0.0)
    assert np.allclose(pooled.v_total, pooled.v_within)
    assert np.allclose(pooled.beta_bar, fit.beta_db)
    mid = (pooled.ci_lower + pooled.ci_upper) / 2
    assert np.allclose(mid, fit.beta_db)


def test_half_width_formula():
    n = 400
    fits = [make_fit([1.0], [1.0 / (2 * n)], n=n),
            make_fit([1.0], [1.0 / (2 * n)], n=n)]
    pooled = rubin_pool(fits, alpha=0.05)
    # v_between = 0, so v_total = 1/(2n); build the 1/n case directly
    assert pooled.v_total[0] == pytest.approx(1 / (2 * n))
    fits2 = [make_fit([0.0], [1.0 / n], n=n)] * 2
    pooled2 = rubin_pool(fits2, alpha=0.05)
    half = (pooled2.ci_upper[0] - pooled2.ci_lower[0]) / 2
    assert half == pytest.approx(norm.ppf(0.975) / np.sqrt(n))


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    fits = [make_fit(rng.normal(size=3), rng.uniform(0.01, 0.05, 3))
            for _ in range(6)]
    a = rubin_pool(fits)
    b = rubin_pool(fits[::-1])
    for field in ("beta_bar", "v_within", "v_between", "v_total",
                  "ci_lower", "ci_upper", "z_scores", "p_values"):
        assert np.allclose(getattr(a, field), getattr(b, field), atol=1e-15)


def test_widening_against_within_only():
    rng = np.random.default_rng(1)
    fits = [make_fit(rng.normal(size=2), [0.02, 0.03]) for _ in range(5)]
    pooled = rubin_pool(fits)
    half = (pooled.ci_upper - pooled.ci_lower) / 2
    half_within = norm.ppf(0.975) * np.sqrt(pooled.v_within)
    assert np.all(half >= half_within - 1e-15)


def test_duplication_cannot_increase_between_variance():
    rng = np.random.default_rng(2)
    fits = [make_fit(rng.normal(size=2), [0.02, 0.02]) for _ in range(4)]
    pooled = rubin_pool(fits)
    doubled = rubin_pool(fits + fits)
    assert np.allclose(doubled.beta_bar, pooled.beta_bar)
    assert np.all(doubled.v_between <= pooled.v_between + 1e-15)


def test_pooling_errors():
    fit = make_fit([1.0], [0.1])
    with pytest.raises(ValueError):
        rubin_pool([fit])
    with pytest.raises(ValueError):
        rubin_pool([fit, make_fit([1.0, 2.0], [0.1, 0.1])])


def test_z_and_p_values():
    fits = [make_fit([2.0, 0.0], [0.5, 0.5]),
            make_fit([2.0, 0.0], [0.5, 0.5])]
    pooled = rubin_pool(fits)
    assert pooled.z_scores[0] == pytest.approx(2.0 / np.sqrt(0.5))
    assert pooled.p_values[0] == pytest.approx(
        2 * norm.sf(2.0 / np.sqrt(0.5)))
    assert pooled.z_scores[1] == 0.0
    assert pooled.p_values[1] == pytest.approx(1.0)


def test_accepts_chain_results():
    from smcdbl.engine import ChainResult
    from smcdbl.survival import BaselineHazard, CompletedMatrix

    fit = make_fit([0.3, 0.1], [0.01, 0.01])
    wrapped = ChainResult(
        beta_star=fit.beta_db, hazard_star=BaselineHazard(np.array([1.0]),
                                                          np.array([0.1])),
        completed=CompletedMatrix(np.zeros((2, 2)), np.ones((2, 2), bool)),
        debiased=fit, outer_iterations=1, converged=True)
    pooled = rubin_pool([wrapped, fit])
    assert np.allclose(pooled.beta_bar, fit.beta_db)
