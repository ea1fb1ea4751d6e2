"""Rubin's-rules combination of per-chain debiased estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass
class PooledInference:
    beta_bar: np.ndarray
    v_within: np.ndarray
    v_between: np.ndarray
    v_total: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    z_scores: np.ndarray
    p_values: np.ndarray
    M: int
    alpha: float


def rubin_pool(chains, alpha: float = 0.05) -> PooledInference:
    """Pool M >= 2 per-chain debiased fits.

    beta_bar is the chain mean, V_W the mean of diag(Theta)/n, V_B the
    between-chain sample variance (divisor M-1), and
    V_total = V_W + (1 + 1/M) V_B.  Intervals and p-values use the standard
    normal reference.
    """
    fits = [getattr(ch, "debiased", ch) for ch in chains]
    m = len(fits)
    if m < 2:
        raise ValueError("Rubin pooling needs at least two chains")
    p = fits[0].beta_db.shape[0]
    if any(f.beta_db.shape != (p,) for f in fits):
        raise ValueError("chains disagree on dimension")

    ests = np.stack([f.beta_db for f in fits])
    beta_bar = ests.mean(axis=0)
    v_within = np.stack([f.v_within for f in fits]).mean(axis=0)
    v_between = ests.var(axis=0, ddof=1)
    v_total = v_within + (1 + 1 / m) * v_between

    se = np.sqrt(v_total)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta_bar / se, 0.0)
    q = norm.ppf(1 - alpha / 2)
    return PooledInference(
        beta_bar=beta_bar,
        v_within=v_within,
        v_between=v_between,
        v_total=v_total,
        ci_lower=beta_bar - q * se,
        ci_upper=beta_bar + q * se,
        z_scores=z,
        p_values=2 * norm.sf(np.abs(z)),
        M=m,
        alpha=float(alpha),
    )
