"""Cox partial-likelihood primitives shared by the whole pipeline.

Loss, gradient, information matrix, observed Hessian, risk-set means and the
Breslow baseline cumulative hazard, all under the Breslow convention for tied
event times (every tied event sees the full risk set) and inclusive risk sets
``Y_j >= Y_i``.  Linear predictors are max-shifted before exponentiation so
that every quantity is overflow-safe; the shift cancels in all ratios.

All functions are pure; nothing here holds mutable state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import cox_eta_stats as _cox_eta_stats


class AllCensoredWarning(UserWarning):
    """Raised when a computation receives a dataset without any events."""


# ---------------------------------------------------------------------------
# variable kinds
# ---------------------------------------------------------------------------

_KINDS = ("continuous", "binary", "ordinal", "categorical")


@dataclass(frozen=True)
class VariableKind:
    """Per-column tag: continuous, binary, ordinal(k) or categorical(k).

    Discrete levels are the integer codes ``0 .. levels-1``; the codes are the
    numeric values stored in the covariate matrix.
    """

    kind: str
    levels: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "continuous":
            if self.levels is not None:
                raise ValueError("continuous columns carry no level count")
        elif self.kind == "binary":
            if self.levels not in (None, 2):
                raise ValueError("binary columns have exactly 2 levels")
            object.__setattr__(self, "levels", 2)
        else:
            if self.levels is None or self.levels < 2:
                raise ValueError(f"{self.kind} columns need levels >= 2")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous"

    def level_values(self) -> np.ndarray:
        if not self.is_discrete:
            raise ValueError("continuous columns have no level set")
        return np.arange(self.levels, dtype=float)

    @classmethod
    def parse(cls, text: str) -> "VariableKind":
        """Parse 'continuous', 'binary', 'ordinal<k>' or 'categorical<k>'."""
        text = text.strip().lower()
        if text in ("continuous", "binary"):
            return cls(text)
        for name in ("ordinal", "categorical"):
            if text.startswith(name):
                tail = text[len(name):]
                if not tail.isdigit():
                    raise ValueError(f"{name} kind needs a level count, got {text!r}")
                return cls(name, int(tail))
        raise ValueError(f"cannot parse variable kind {text!r}")


CONTINUOUS = VariableKind("continuous")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalDataset:
    """Observed times, event flags and a covariate matrix with presence mask.

    ``mask[i, j]`` is True when cell (i, j) was observed.  Cells with
    ``mask == False`` may hold anything (typically NaN).
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    mask: np.ndarray
    kinds: tuple = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        events = np.asarray(self.events)
        cov = np.asarray(self.covariates, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events.astype(np.int64))
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "mask", mask)
        if times.ndim != 1 or cov.ndim != 2:
            raise ValueError("times must be 1-d and covariates 2-d")
        n, p = cov.shape
        if n < 2 or p < 1:
            raise ValueError("need n >= 2 subjects and p >= 1 covariates")
        if times.shape != (n,) or events.shape != (n,) or mask.shape != (n, p):
            raise ValueError("times/events/mask shapes do not match covariates")
        if np.any(times < 0) or not np.all(np.isfinite(times)):
            raise ValueError("times must be finite and non-negative")
        if not np.all(np.isin(self.events, (0, 1))):
            raise ValueError("events must be 0/1")
        if not np.all(np.isfinite(cov[mask])):
            raise ValueError("observed covariate cells must be finite")
        kinds = self.kinds or tuple(CONTINUOUS for _ in range(p))
        if len(kinds) != p:
            raise ValueError("one kind per column required")
        object.__setattr__(self, "kinds", tuple(kinds))
        for j, kind in enumerate(self.kinds):
            if kind.is_discrete:
                seen = cov[mask[:, j], j]
                if seen.size and not np.all(np.isin(seen, kind.level_values())):
                    raise ValueError(
                        f"column {j} has observed values outside its level set"
                    )

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    def missing_columns(self) -> np.ndarray:
        """Indices of partially observed columns, ascending."""
        return np.flatnonzero(~self.mask.all(axis=0))


@dataclass
class CompletedMatrix:
    """A fully imputed covariate matrix; observed cells match the dataset."""

    values: np.ndarray
    source_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.source_mask = np.asarray(self.source_mask, dtype=bool)
        if self.values.shape != self.source_mask.shape:
            raise ValueError("values and source_mask shapes differ")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("completed matrix must be finite everywhere")

    def check_against(self, data: SurvivalDataset) -> None:
        """Assert observed cells were never overwritten."""
        m = data.mask
        if not np.array_equal(self.source_mask, m):
            raise ValueError("source_mask does not match the dataset mask")
        if not np.array_equal(self.values[m], data.covariates[m]):
            raise ValueError("completed matrix disagrees with observed cells")

    def copy(self) -> "CompletedMatrix":
        return CompletedMatrix(self.values.copy(), self.source_mask)


def as_matrix(x) -> np.ndarray:
    """Accept a CompletedMatrix or a plain ndarray."""
    vals = getattr(x, "values", x)
    return np.asarray(vals, dtype=float)


@dataclass(frozen=True)
class BaselineHazard:
    """Right-continuous step function: jump times with positive jump sizes."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        js = np.asarray(self.jump_sizes, dtype=float)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_sizes", js)
        if jt.shape != js.shape or jt.ndim != 1:
            raise ValueError("jump_times and jump_sizes must be equal-length vectors")
        if jt.size and np.any(np.diff(jt) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        if np.any(js <= 0):
            raise ValueError("jump sizes must be positive")

    def cumulative(self, t):
        """Lambda_0(t) = sum of jumps at times <= t (right-continuous)."""
        t = np.asarray(t, dtype=float)
        csum = np.concatenate(([0.0], np.cumsum(self.jump_sizes)))
        idx = np.searchsorted(self.jump_times, t, side="right")
        out = csum[idx]
        return out if out.ndim else float(out)

    def jump_at(self, t):
        """Jump size at exactly t; zero at non-jump times by construction."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="left")
        idx_c = np.clip(idx, 0, max(self.jump_times.size - 1, 0))
        if self.jump_times.size == 0:
            out = np.zeros_like(t)
        else:
            hit = self.jump_times[idx_c] == t
            out = np.where(hit, self.jump_sizes[idx_c], 0.0)
        return out if out.ndim else float(out)

    def sup_distance(self, other: "BaselineHazard") -> float:
        """sup_t |Lambda_self(t) - Lambda_other(t)| over all jump points."""
        grid = np.union1d(self.jump_times, other.jump_times)
        if grid.size == 0:
            return 0.0
        return float(np.max(np.abs(self.cumulative(grid) - other.cumulative(grid))))


# ---------------------------------------------------------------------------
# risk-set machinery
# ---------------------------------------------------------------------------


@dataclass
class CoxCache:
    """Sorted-time index shared by repeated evaluations on one dataset.

    Risk sets are suffixes of the ascending time order, grouped by distinct
    time so the Breslow tie convention is automatic.
    """

    times: np.ndarray
    events: np.ndarray
    order: np.ndarray = field(init=False)
    group_of: np.ndarray = field(init=False)          # per subject, original order
    group_starts: np.ndarray = field(init=False)      # into the sorted order
    group_sizes: np.ndarray = field(init=False)
    group_times: np.ndarray = field(init=False)
    d: np.ndarray = field(init=False)                 # events per distinct time
    n_groups: int = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        self.order = np.argsort(t, kind="stable")
        ts = t[self.order]
        new_group = np.empty(ts.size, dtype=bool)
        new_group[0] = True
        new_group[1:] = ts[1:] != ts[:-1]
        self.group_starts = np.flatnonzero(new_group)
        self.group_times = ts[self.group_starts]
        self.n_groups = self.group_starts.size
        gid_sorted = np.cumsum(new_group) - 1
        self.group_of = np.empty(ts.size, dtype=np.int64)
        self.group_of[self.order] = gid_sorted
        self.group_sizes = np.bincount(gid_sorted, minlength=self.n_groups)
        self.d = np.bincount(
            gid_sorted, weights=self.events[self.order].astype(float),
            minlength=self.n_groups,
        )

    def stats(self, eta: np.ndarray, need_weights: bool = False):
        """Per-subject score/curvature pieces of the partial likelihood.

        Returns (loglik_terms_sum, g, h) where, writing A_i / B_i for the
        prefix sums of d_r/S0_r and d_r/S0_r^2 over event times <= Y_i,

            loglik (unnormalized, negative) = -(sum_events eta_i - log S0)
            g_i = -(Delta_i - exp(eta_i) A_i)      d(-loglik)/d eta_i
            h_i = exp(eta_i) A_i - exp(eta_i)^2 B_i  (diagonal curvature)

        No 1/n factors here; callers normalize.
        """
        if not hasattr(self, "_events_f"):
            self._events_f = self.events.astype(float)
        neg_ll, g, h = _cox_eta_stats(
            np.ascontiguousarray(eta, dtype=float), self._events_f,
            self.group_of, self.d, self.n_groups, need_weights)
        return neg_ll, g, (h if need_weights else None)

    def risk_means(self, eta: np.ndarray, x: np.ndarray):
        """Risk-set weighted covariate mean at each subject's own time."""
        m = float(np.max(eta))
        es = np.exp(eta - m)
        per_group = np.bincount(self.group_of, weights=es, minlength=self.n_groups)
        G = np.cumsum(per_group[::-1])[::-1]
        xs = x[self.order] * es[self.order, None]
        gsum = np.add.reduceat(xs, self.group_starts, axis=0)
        S1 = np.cumsum(gsum[::-1], axis=0)[::-1]
        means = S1 / G[:, None]
        return means[self.group_of]

    def breslow_jumps(self, eta: np.ndarray):
        """(jump_times, jump_sizes) at distinct event times: d_r / S0(t_r)."""
        m = float(np.max(eta))
        es = np.exp(eta - m)
        per_group = np.bincount(self.group_of, weights=es, minlength=self.n_groups)
        G = np.cumsum(per_group[::-1])[::-1]
        has_event = self.d > 0
        sizes = self.d[has_event] / (G[has_event] * np.exp(m))
        return self.group_times[has_event], sizes


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _check_beta(beta, p):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({p},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def _no_events(data) -> bool:
    if data.n_events == 0:
        warnings.warn("dataset contains no events", AllCensoredWarning)
        return True
    return False


def neg_log_partial_likelihood(beta, x, data: SurvivalDataset,
                               cache: CoxCache | None = None) -> float:
    """Negative Cox partial log-likelihood normalized by n.

    ell_n(beta; X) = -(1/n) sum_{i: event} [X_i'beta - log sum_{Y_j >= Y_i} exp(X_j'beta)]
    """
    xm = as_matrix(x)
    beta = _check_beta(beta, xm.shape[1])
    if _no_events(data):
        return 0.0
    cache = cache or CoxCache(data.times, data.events)
    eta = xm @ beta
    neg_ll, _, _ = cache.stats(eta)
    return float(neg_ll / data.n)


def partial_likelihood_gradient(beta, x, data: SurvivalDataset,
                                cache: CoxCache | None = None) -> np.ndarray:
    """Gradient of the normalized negative partial log-likelihood."""
    xm = as_matrix(x)
    beta = _check_beta(beta, xm.shape[1])
    if _no_events(data):
        return np.zeros(xm.shape[1])
    cache = cache or CoxCache(data.times, data.events)
    eta = xm @ beta
    _, g, _ = cache.stats(eta)
    return (xm.T @ g) / data.n


def information_matrix(beta, x, data: SurvivalDataset,
                       cache: CoxCache | None = None) -> np.ndarray:
    """Outer-product information matrix.

    Sigma_hat = (1/n) sum_i Delta_i {X_i - etahat(Y_i)}^{x2}, with etahat the
    risk-set weighted covariate mean.  Symmetric PSD by construction.
    """
    xm = as_matrix(x)
    beta = _check_beta(beta, xm.shape[1])
    if _no_events(data):
        return np.zeros((xm.shape[1], xm.shape[1]))
    cache = cache or CoxCache(data.times, data.events)
    eta = xm @ beta
    means = cache.risk_means(eta, xm)
    ev = data.events == 1
    resid = xm[ev] - means[ev]
    sigma = (resid.T @ resid) / data.n
    return (sigma + sigma.T) / 2.0


def observed_hessian(beta, x, data: SurvivalDataset,
                     cache: CoxCache | None = None) -> np.ndarray:
    """Observed Hessian of the normalized negative partial log-likelihood.

    (1/n) sum_i Delta_i [S2/S0 - (S1/S0)^{x2}](Y_i), accumulated over distinct
    times in descending order with running risk-set moments.
    """
    xm = as_matrix(x)
    beta = _check_beta(beta, xm.shape[1])
    p = xm.shape[1]
    if _no_events(data):
        return np.zeros((p, p))
    cache = cache or CoxCache(data.times, data.events)
    eta = xm @ beta
    m = float(np.max(eta))
    es = np.exp(eta - m)
    xs = xm[cache.order]
    ws = es[cache.order]
    starts = cache.group_starts
    ends = np.append(starts[1:], data.n)
    S0 = 0.0
    S1 = np.zeros(p)
    S2 = np.zeros((p, p))
    H = np.zeros((p, p))
    for r in range(cache.n_groups - 1, -1, -1):
        rows = slice(starts[r], ends[r])
        w = ws[rows]
        xg = xs[rows]
        S0 += float(w.sum())
        S1 += w @ xg
        S2 += (xg * w[:, None]).T @ xg
        if cache.d[r] > 0:
            mu = S1 / S0
            H += cache.d[r] * (S2 / S0 - np.outer(mu, mu))
    H /= data.n
    return (H + H.T) / 2.0


def breslow(beta, x, data: SurvivalDataset,
            cache: CoxCache | None = None) -> BaselineHazard:
    """Breslow baseline cumulative hazard at the given coefficients.

    Jump at each distinct event time = (#events there) / sum_{Y_i >= t} exp(X_i'beta).
    """
    xm = as_matrix(x)
    beta = _check_beta(beta, xm.shape[1])
    if _no_events(data):
        return BaselineHazard(np.array([]), np.array([]))
    cache = cache or CoxCache(data.times, data.events)
    eta = xm @ beta
    jt, js = cache.breslow_jumps(eta)
    return BaselineHazard(jt, js)
