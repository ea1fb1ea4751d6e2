"""Monte-Carlo study: data generation, the five compared methods, and
operating-characteristic metrics on the active set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import lasso
from .debias import debias, nodewise_theta
from .engine import (
    ChainSchedule,
    TuningConfig,
    gamma_from_rate,
    phase0_tune,
    run_chain,
    run_iro_fixed_point,
)
from .imputation import ImputationFailure
from .pooling import rubin_pool
from .survival import SurvivalDataset, information_matrix, observed_hessian

METHODS = ("smc_dbl", "oracle_dbl", "standard_iro", "std_smcfcs", "mean_imp_dbl")

# fixed stream tags so each consumer's randomness is independent of which
# other methods run
_STREAM_DATASET = 101
_STREAM_TUNING = 202
_STREAM_METHOD = {name: 300 + i for i, name in enumerate(METHODS)}


def stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng((int(seed),) + tuple(int(t) for t in tags))


@dataclass(frozen=True)
class SimDesign:
    n: int
    p: int
    R: int
    seed: int = 0
    rho: float = 0.5
    censor_rate: float = 0.1
    miss_logit: tuple = (-1.5, 0.8)
    clip: tuple = (0.80, 0.95)
    truncation: tuple = (-5.0, 5.0)

    def __post_init__(self):
        if self.p < 5:
            raise ValueError("the design needs p >= 5 nonzero-capable columns")
        if self.n < 10 or self.R < 1:
            raise ValueError("invalid (n, R)")

    @property
    def beta0(self) -> np.ndarray:
        b = np.zeros(self.p)
        b[:5] = (1.0, 1.0, 1.0, 0.5, 0.5)
        return b

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta0)

    @property
    def miss_coords(self) -> np.ndarray:
        """0-based indices of the partially missing columns (2..floor(0.2p)+1
        in 1-based terms); the first coordinate is always observed."""
        return np.arange(1, int(math.floor(0.2 * self.p)) + 1)


@dataclass
class SimulatedInstance:
    dataset: SurvivalDataset
    complete: np.ndarray


def ar1_cholesky(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(sigma)


def generate_dataset(design: SimDesign, replicate: int) -> SimulatedInstance:
    """One replicate: AR(1) Gaussian covariates truncated to [-5, 5],
    exponential failures with rate exp(X'beta0), Exp(0.1) censoring, and MAR
    missingness driven by the always-observed first coordinate."""
    rng = stream(design.seed, _STREAM_DATASET, replicate)
    n, p = design.n, design.p
    x = rng.standard_normal((n, p)) @ ar1_cholesky(p, design.rho).T
    lo, hi = design.truncation
    np.clip(x, lo, hi, out=x)
    rate = np.exp(x @ design.beta0)
    t_fail = rng.exponential(scale=1.0 / rate)
    t_cens = rng.exponential(scale=1.0 / design.censor_rate, size=n)
    times = np.minimum(t_fail, t_cens)
    events = (t_fail <= t_cens).astype(int)

    mask = np.ones((n, p), dtype=bool)
    a, b = design.miss_logit
    # missingness probability driven by the always-observed first coordinate,
    # clipped so the observation probability stays in the clip band
    p_mis = np.clip(expit(a + b * x[:, 0]),
                    1.0 - design.clip[1], 1.0 - design.clip[0])
    for j in design.miss_coords:
        mask[:, j] = rng.random(n) >= p_mis
    observed = np.where(mask, x, np.nan)
    dataset = SurvivalDataset(times=times, events=events,
                              covariates=observed, mask=mask)
    return SimulatedInstance(dataset=dataset, complete=x)


@dataclass
class MethodResult:
    method: str
    estimates: np.ndarray
    ses: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    valid: bool
    message: str = ""


def _invalid(method: str, p: int, message: str) -> MethodResult:
    nanv = np.full(p, np.nan)
    return MethodResult(method, nanv, nanv.copy(), nanv.copy(), nanv.copy(),
                        valid=False, message=message)


def _interval(est, se, alpha):
    q = norm.ppf(1 - alpha / 2)
    return est - q * se, est + q * se


def _complete_data_debias(xm, data: SurvivalDataset, rng, alpha: float):
    """CV'd lasso + nodewise + one-step correction on a complete matrix."""
    lam = lasso.cv_select_lambda(xm, data, 5, lasso.default_grid(xm, data), rng)
    fit = lasso.fit(xm, data, lam)
    sigma = information_matrix(fit.beta, xm, data)
    theta = nodewise_theta(sigma, gamma_from_rate(data.p, data.n))
    db = debias(fit, theta, xm, data)
    se = np.sqrt(db.v_within)
    lo, hi = _interval(db.beta_db, se, alpha)
    return db.beta_db, se, lo, hi


def run_method(method: str, instance: SimulatedInstance, tuning: TuningConfig,
               rng, *, chains: int = 20, alpha: float = 0.05,
               schedule: ChainSchedule | None = None) -> MethodResult:
    """One comparator on one replicate; numerical breakdowns (singular
    working fits, stalled truncation sampling, non-finite output) mark the
    replicate invalid rather than aborting the study."""
    data = instance.dataset
    n, p = data.n, data.p
    schedule = schedule or ChainSchedule.default_for(n, p)
    try:
        if method == "smc_dbl" or method == "std_smcfcs":
            tune = tuning if method == "smc_dbl" else replace(tuning, ridge_lambda=0.0)
            rngs = rng.spawn(chains)
            results = [run_chain(data, tune, m, schedule, rngs[m])
                       for m in range(chains)]
            pooled = rubin_pool(results, alpha=alpha)
            est, se = pooled.beta_bar, np.sqrt(pooled.v_total)
            lo, hi = pooled.ci_lower, pooled.ci_upper
        elif method == "oracle_dbl":
            full = SurvivalDataset(
                times=data.times, events=data.events,
                covariates=instance.complete,
                mask=np.ones((n, p), dtype=bool), kinds=data.kinds)
            est, se, lo, hi = _complete_data_debias(
                instance.complete, full, rng, alpha)
        elif method == "standard_iro":
            beta_star, _, ws, _, _ = run_iro_fixed_point(
                data, tuning.lambda_n, tuning.ridge_lambda, schedule, rng)
            hess = observed_hessian(beta_star, ws.x, data)
            cov = np.linalg.inv(hess + 1e-6 * np.eye(p))
            est = beta_star
            se = np.sqrt(np.diag(cov) / n)
            lo, hi = _interval(est, se, alpha)
        elif method == "mean_imp_dbl":
            filled = fill_mean_mode(data)
            comp = SurvivalDataset(
                times=data.times, events=data.events, covariates=filled,
                mask=np.ones((n, p), dtype=bool), kinds=data.kinds)
            est, se, lo, hi = _complete_data_debias(filled, comp, rng, alpha)
        else:
            raise ValueError(f"unknown method {method!r}")
    except (ImputationFailure, np.linalg.LinAlgError) as exc:
        return _invalid(method, p, f"{type(exc).__name__}: {exc}")
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(se))):
        return _invalid(method, p, "non-finite estimates")
    return MethodResult(method, est, se, lo, hi, valid=True)


def fill_mean_mode(data: SurvivalDataset) -> np.ndarray:
    """Column means for continuous, modes for discrete (ties to the smaller
    level); only missing cells are replaced."""
    out = data.covariates.copy()
    for j in data.missing_columns():
        obs = data.mask[:, j]
        vals = data.covariates[obs, j]
        if data.kinds[j].is_discrete:
            levels, counts = np.unique(vals, return_counts=True)
            fill = levels[int(np.argmax(counts))]
        else:
            fill = float(vals.mean())
        out[~obs, j] = fill
    return out


# ---------------------------------------------------------------------------
# study orchestration and metrics
# ---------------------------------------------------------------------------


@dataclass
class ReplicateStore:
    method: str
    estimates: np.ndarray      # (R, p)
    ses: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    valid: np.ndarray          # (R,) bool
    messages: list = field(default_factory=list)


def _needs_tuning(methods) -> bool:
    return any(m in methods for m in ("smc_dbl", "std_smcfcs", "standard_iro"))


def run_replicate(design: SimDesign, replicate: int, methods,
                  chains: int = 20, alpha: float = 0.05,
                  schedule: ChainSchedule | None = None) -> dict:
    """All requested methods on one replicate (the parallel work unit)."""
    instance = generate_dataset(design, replicate)
    tuning = None
    if _needs_tuning(methods):
        tuning = phase0_tune(instance.dataset,
                             stream(design.seed, _STREAM_TUNING, replicate),
                             schedule=schedule)
    out = {}
    for method in methods:
        rng = stream(design.seed, _STREAM_METHOD[method], replicate)
        out[method] = run_method(method, instance, tuning, rng,
                                 chains=chains, alpha=alpha, schedule=schedule)
    return out


def run_study(design: SimDesign, methods=METHODS, *, chains: int = 20,
              alpha: float = 0.05, schedule: ChainSchedule | None = None,
              n_jobs: int = 1, progress=None) -> dict[str, ReplicateStore]:
    """R independent replicates; replicates are the parallel unit and results
    are order-independent (each replicate owns its seeded streams)."""
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    reps = range(design.R)
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(run_replicate, design, r, methods,
                                   chains, alpha, schedule) for r in reps]
            per_rep = []
            for r, fut in enumerate(futures):
                per_rep.append(fut.result())
                if progress:
                    progress(r + 1, design.R)
    else:
        per_rep = []
        for r in reps:
            per_rep.append(run_replicate(design, r, methods, chains, alpha,
                                         schedule))
            if progress:
                progress(r + 1, design.R)

    stores = {}
    for method in methods:
        p = design.p
        est = np.full((design.R, p), np.nan)
        se = np.full((design.R, p), np.nan)
        lo = np.full((design.R, p), np.nan)
        hi = np.full((design.R, p), np.nan)
        valid = np.zeros(design.R, dtype=bool)
        msgs = []
        for r, res in enumerate(per_rep):
            mr = res[method]
            est[r], se[r], lo[r], hi[r] = (mr.estimates, mr.ses,
                                           mr.ci_lower, mr.ci_upper)
            valid[r] = mr.valid
            if mr.message:
                msgs.append(f"replicate {r}: {mr.message}")
        stores[method] = ReplicateStore(method, est, se, lo, hi, valid, msgs)
    return stores


@dataclass
class MetricsRow:
    method: str
    n: int
    p: int
    R: int
    n_valid: int
    abs_bias: float
    rmse: float
    emp_se: float
    avg_se: float
    coverage: float
    calibration: float
    # per-coordinate detail on the active set, same order as active_set
    active_set: np.ndarray = None
    bias_k: np.ndarray = None
    rmse_k: np.ndarray = None
    emp_se_k: np.ndarray = None
    avg_se_k: np.ndarray = None
    coverage_k: np.ndarray = None


def compute_metrics(store: ReplicateStore, design: SimDesign) -> MetricsRow:
    """Active-set operating characteristics over the valid replicates.

    bias_k = mean(est_k) - beta0_k, rmse_k = sqrt(mean (est_k - beta0_k)^2),
    emp_se_k = sd(est_k, ddof=1), avg_se_k = mean(se_k), coverage from the
    stored intervals; aggregate values average the per-coordinate ones over
    the active set, and calibration = avg_se / emp_se of the aggregates.
    """
    if design.R < 2:
        raise ValueError("metrics need R >= 2")
    s = design.active_set
    b0 = design.beta0[s]
    ok = store.valid
    n_valid = int(ok.sum())
    if n_valid < 2:
        nan = float("nan")
        return MetricsRow(store.method, design.n, design.p, design.R, n_valid,
                          nan, nan, nan, nan, nan, nan)
    est = store.estimates[np.ix_(ok, s)]
    ses = store.ses[np.ix_(ok, s)]
    lo = store.ci_lower[np.ix_(ok, s)]
    hi = store.ci_upper[np.ix_(ok, s)]
    bias_k = est.mean(axis=0) - b0
    rmse_k = np.sqrt(((est - b0) ** 2).mean(axis=0))
    emp_se_k = est.std(axis=0, ddof=1)
    avg_se_k = ses.mean(axis=0)
    coverage_k = ((lo <= b0) & (b0 <= hi)).mean(axis=0)
    emp = float(emp_se_k.mean())
    avg = float(avg_se_k.mean())
    return MetricsRow(
        method=store.method, n=design.n, p=design.p, R=design.R,
        n_valid=n_valid,
        abs_bias=float(np.abs(bias_k).mean()),
        rmse=float(rmse_k.mean()),
        emp_se=emp,
        avg_se=avg,
        coverage=float(coverage_k.mean()),
        calibration=avg / emp if emp > 0 else float("nan"),
        active_set=s, bias_k=bias_k, rmse_k=rmse_k, emp_se_k=emp_se_k,
        avg_se_k=avg_se_k, coverage_k=coverage_k,
    )
