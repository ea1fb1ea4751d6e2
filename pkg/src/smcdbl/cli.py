"""Command-line entry points: ``analyze`` for user CSVs and ``simulate``
for the operating-characteristic study.

Exit codes: 0 success, 2 schema/usage error, 3 convergence failure under
--strict.  All randomness flows from a single seed; chain m derives its
stream from (seed, chain-tag, m), so outputs are byte-identical across runs
and independent of the parallelism level.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .engine import ChainSchedule, TuningConfig, phase0_tune, run_chain
from .pooling import rubin_pool
from .simulate import METHODS, SimDesign, compute_metrics, run_study
from .survival import CONTINUOUS, SurvivalDataset, VariableKind

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NOCONV = 3

_MISSING_TOKENS = ("", "NA")

_CHAIN_STREAM = 777


class SchemaError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class AnalysisConfig:
    input_path: str
    time_col: str
    event_col: str
    out_path: str
    covariate_cols: list = None
    kinds: dict = field(default_factory=dict)
    chains: int = 20
    s_in: int | None = None
    t0: int | None = None
    epsilon: float = 1e-3
    max_outer: int = 50
    alpha: float = 0.05
    seed: int = 0
    standardize: bool = False
    strict: bool = False
    threads: int = 1
    # tuning overrides; None means Phase-0 decides
    lambda_n: float | None = None
    ridge_lambda: float | None = None
    gamma_n: float | None = None
    qp_multiplier: float = 0.5


def read_analysis_csv(config: AnalysisConfig):
    """Parse the input CSV into a SurvivalDataset plus column names.

    Missing covariate cells are '' or 'NA'; outcome columns must be complete
    and the event column must be 0/1.
    """
    try:
        with open(config.input_path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {config.input_path}: {exc}") from exc
    if len(rows) < 3:
        raise SchemaError("input needs a header row and at least two data rows")
    header, body = rows[0], rows[1:]
    for col in (config.time_col, config.event_col):
        if col not in header:
            raise SchemaError(f"column {col!r} not in header")
    t_idx = header.index(config.time_col)
    e_idx = header.index(config.event_col)
    cov_names = config.covariate_cols or [
        h for i, h in enumerate(header) if i not in (t_idx, e_idx)
    ]
    missing_cols = [c for c in cov_names if c not in header]
    if missing_cols:
        raise SchemaError(f"covariate columns not in header: {missing_cols}")
    if not cov_names:
        raise SchemaError("no covariate columns")
    c_idx = [header.index(c) for c in cov_names]

    n, p = len(body), len(cov_names)
    times = np.empty(n)
    events = np.empty(n, dtype=int)
    cov = np.full((n, p), np.nan)
    mask = np.zeros((n, p), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaError(f"row {i + 2} has {len(row)} fields, expected {len(header)}")
        t_raw, e_raw = row[t_idx].strip(), row[e_idx].strip()
        if t_raw in _MISSING_TOKENS or e_raw in _MISSING_TOKENS:
            raise SchemaError(f"row {i + 2}: outcome cells must be complete")
        try:
            times[i] = float(t_raw)
        except ValueError as exc:
            raise SchemaError(f"row {i + 2}: bad time value {t_raw!r}") from exc
        if e_raw not in ("0", "1"):
            raise SchemaError(f"row {i + 2}: event must be 0 or 1, got {e_raw!r}")
        events[i] = int(e_raw)
        for jj, ci in enumerate(c_idx):
            raw = row[ci].strip()
            if raw in _MISSING_TOKENS:
                continue
            try:
                cov[i, jj] = float(raw)
            except ValueError as exc:
                raise SchemaError(f"row {i + 2}: bad value {raw!r} in {cov_names[jj]}") from exc
            mask[i, jj] = True

    kinds = []
    for name in cov_names:
        kind = config.kinds.get(name, CONTINUOUS)
        kinds.append(kind)
    try:
        data = SurvivalDataset(times=times, events=events, covariates=cov,
                               mask=mask, kinds=tuple(kinds))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    return data, cov_names


def _standardize(data: SurvivalDataset):
    """Scale continuous covariates to unit variance (over observed cells)."""
    cov = data.covariates.copy()
    scales = np.ones(data.p)
    for j, kind in enumerate(data.kinds):
        if kind.is_discrete:
            continue
        obs = data.mask[:, j]
        sd = float(cov[obs, j].std(ddof=1)) if obs.sum() > 1 else 0.0
        if sd > 0:
            scales[j] = sd
            cov[obs, j] = cov[obs, j] / sd
    scaled = SurvivalDataset(times=data.times, events=data.events,
                             covariates=cov, mask=data.mask, kinds=data.kinds)
    return scaled, scales


def _thread_cap(requested: int) -> int:
    cap = os.environ.get("SMCDBL_THREADS")
    if cap:
        return max(1, min(requested, int(cap)))
    return max(1, requested)


def _run_chain_job(args):
    data, tuning, m, schedule, seed = args
    rng = np.random.default_rng((seed, _CHAIN_STREAM, 0, m))
    return run_chain(data, tuning, m, schedule, rng)


def cmd_analyze(config: AnalysisConfig) -> int:
    data, names = read_analysis_csv(config)
    if data.n_events < 1:
        raise SchemaError("dataset has no events")
    if config.chains < 2:
        raise SchemaError("need at least 2 chains for pooled output")
    if config.standardize:
        data, _ = _standardize(data)

    schedule = ChainSchedule.default_for(data.n, data.p,
                                         epsilon=config.epsilon,
                                         max_outer=config.max_outer)
    if config.s_in:
        schedule.s_in = config.s_in
    if config.t0:
        schedule.t0 = config.t0

    overrides = (config.lambda_n, config.ridge_lambda, config.gamma_n)
    if all(v is not None for v in overrides):
        tuning = TuningConfig(lambda_n=config.lambda_n,
                              ridge_lambda=config.ridge_lambda,
                              gamma_n=config.gamma_n,
                              qp_multiplier=config.qp_multiplier)
    else:
        rng = np.random.default_rng((config.seed, 202, 0))
        tuning = phase0_tune(data, rng, qp_multiplier=config.qp_multiplier,
                             schedule=schedule)
        if config.lambda_n is not None:
            tuning.lambda_n = config.lambda_n
        if config.ridge_lambda is not None:
            tuning.ridge_lambda = config.ridge_lambda
        if config.gamma_n is not None:
            tuning.gamma_n = config.gamma_n

    jobs = [(data, tuning, m, schedule, config.seed)
            for m in range(config.chains)]
    workers = _thread_cap(config.threads)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(_run_chain_job, jobs))
    else:
        chains = [_run_chain_job(j) for j in jobs]

    pooled = rubin_pool(chains, alpha=config.alpha)
    header = ["variable", "estimate", "se", "z", "p_value",
              "ci_lower", "ci_upper", "v_within", "v_between"]
    with open(config.out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        se = np.sqrt(pooled.v_total)
        for k, name in enumerate(names):
            writer.writerow([name] + [_fmt(v) for v in (
                pooled.beta_bar[k], se[k], pooled.z_scores[k],
                pooled.p_values[k], pooled.ci_lower[k], pooled.ci_upper[k],
                pooled.v_within[k], pooled.v_between[k])])
    n_conv = sum(ch.converged for ch in chains)
    print(f"analyze: n={data.n} p={data.p} chains={config.chains} "
          f"converged={n_conv} out={config.out_path}")
    if config.strict and n_conv < config.chains:
        print("strict mode: some chains did not converge", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def write_metrics_csv(path: str, rows) -> None:
    header = ["n", "p", "R", "method", "n_valid", "abs_bias", "rmse",
              "emp_se", "avg_se", "coverage", "calibration"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                row.n, row.p, row.R, row.method, row.n_valid,
                _fmt(row.abs_bias), _fmt(row.rmse), _fmt(row.emp_se),
                _fmt(row.avg_se), _fmt(row.coverage), _fmt(row.calibration),
            ])


def cmd_simulate(args) -> int:
    reps = 10 if args.profile == "smoke" and args.reps is None else args.reps
    if reps is None:
        reps = 100
    if reps < 2:
        raise SchemaError("metrics need at least 2 replicates")
    methods = tuple(METHODS) if args.methods == "all" else tuple(
        m.strip() for m in args.methods.split(","))
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise SchemaError(f"unknown methods: {sorted(unknown)}")
    try:
        design = SimDesign(n=args.n, p=args.p, R=reps, seed=args.seed,
                           rho=args.rho)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc

    stores = run_study(design, methods, chains=args.chains,
                       n_jobs=_thread_cap(args.threads))
    rows = [compute_metrics(stores[m], design) for m in methods]
    write_metrics_csv(args.out, rows)
    print(f"simulate: n={design.n} p={design.p} R={design.R} seed={design.seed}")
    for row in rows:
        print(f"  {row.method:13s} n_valid={row.n_valid:4d} "
              f"|bias|={row.abs_bias:.4f} rmse={row.rmse:.4f} "
              f"cov={row.coverage:.3f} cal={row.calibration:.3f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _read_config_file(path: str) -> dict:
    """Flat key = value file; '#' starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise SchemaError(f"{path}:{lineno}: expected key = value")
                key, val = line.split("=", 1)
                out[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    return out


def _parse_kinds(text: str) -> dict:
    kinds = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise SchemaError(f"bad kinds entry {part!r}; use name=kind")
        name, kind = part.split("=", 1)
        try:
            kinds[name.strip()] = VariableKind.parse(kind)
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc
    return kinds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcdbl")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="pooled debiased inference on a CSV")
    pa.add_argument("--input", required=True)
    pa.add_argument("--time-col", default=None)
    pa.add_argument("--event-col", default=None)
    pa.add_argument("--covariates", default=None,
                    help="comma list; default: every other column")
    pa.add_argument("--kinds", default=None,
                    help="name=kind pairs, e.g. sex=binary,snp1=ordinal3")
    pa.add_argument("--config", default=None, help="key = value file")
    pa.add_argument("--chains", type=int, default=None)
    pa.add_argument("--s-in", type=int, default=None)
    pa.add_argument("--t0", type=int, default=None)
    pa.add_argument("--epsilon", type=float, default=None)
    pa.add_argument("--max-outer", type=int, default=None)
    pa.add_argument("--alpha", type=float, default=None)
    pa.add_argument("--seed", type=int, default=None)
    pa.add_argument("--lambda-n", type=float, default=None)
    pa.add_argument("--ridge-lambda", type=float, default=None)
    pa.add_argument("--gamma-n", type=float, default=None)
    pa.add_argument("--qp-multiplier", type=float, default=None)
    pa.add_argument("--standardize", action="store_true", default=None)
    pa.add_argument("--strict", action="store_true", default=None)
    pa.add_argument("--threads", type=int, default=None)
    pa.add_argument("--out", required=True)

    ps = sub.add_parser("simulate", help="operating-characteristic study")
    ps.add_argument("--n", type=int, required=True)
    ps.add_argument("--p", type=int, required=True)
    ps.add_argument("--reps", type=int, default=None)
    ps.add_argument("--seed", type=int, default=7)
    ps.add_argument("--rho", type=float, default=0.5)
    ps.add_argument("--chains", type=int, default=20)
    ps.add_argument("--methods", default="all")
    ps.add_argument("--profile", choices=("full", "smoke"), default="full")
    ps.add_argument("--threads", type=int, default=1)
    ps.add_argument("--out", required=True)
    return parser


_DEFAULTS = dict(chains=20, s_in=None, t0=None, epsilon=1e-3, max_outer=50,
                 alpha=0.05, seed=0, lambda_n=None, ridge_lambda=None,
                 gamma_n=None, qp_multiplier=0.5, standardize=False,
                 strict=False, threads=1, time_col=None, event_col=None)

_CONFIG_PARSERS = dict(chains=int, s_in=int, t0=int, epsilon=float,
                       max_outer=int, alpha=float, seed=int, lambda_n=float,
                       ridge_lambda=float, gamma_n=float, qp_multiplier=float,
                       standardize=lambda s: s.lower() in ("1", "true", "yes"),
                       strict=lambda s: s.lower() in ("1", "true", "yes"),
                       threads=int, time_col=str, event_col=str,
                       covariates=str, kinds=str)


def _merged_analysis_config(args) -> AnalysisConfig:
    """Precedence: command line > config file > defaults."""
    file_vals = _read_config_file(args.config) if args.config else {}
    for key in file_vals:
        if key not in _CONFIG_PARSERS:
            raise SchemaError(f"unknown config key {key!r}")

    def pick(name):
        cli = getattr(args, name, None)
        if cli is not None:
            return cli
        if name in file_vals:
            return _CONFIG_PARSERS[name](file_vals[name])
        return _DEFAULTS.get(name)

    time_col = pick("time_col")
    event_col = pick("event_col")
    if not time_col or not event_col:
        raise SchemaError("--time-col and --event-col are required")
    kinds_text = args.kinds if args.kinds is not None else file_vals.get("kinds")
    cov_text = args.covariates if args.covariates is not None else file_vals.get("covariates")
    return AnalysisConfig(
        input_path=args.input,
        time_col=time_col,
        event_col=event_col,
        out_path=args.out,
        covariate_cols=[c.strip() for c in cov_text.split(",")] if cov_text else None,
        kinds=_parse_kinds(kinds_text) if kinds_text else {},
        chains=pick("chains"), s_in=pick("s_in"), t0=pick("t0"),
        epsilon=pick("epsilon"), max_outer=pick("max_outer"),
        alpha=pick("alpha"), seed=pick("seed"),
        standardize=bool(pick("standardize")), strict=bool(pick("strict")),
        threads=pick("threads"), lambda_n=pick("lambda_n"),
        ridge_lambda=pick("ridge_lambda"), gamma_n=pick("gamma_n"),
        qp_multiplier=pick("qp_multiplier"),
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(_merged_analysis_config(args))
        return cmd_simulate(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
