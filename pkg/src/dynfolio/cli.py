"""Command-line surface: data files, configuration, model persistence.

Wide CSV panels come in (one date column, one column per asset or
covariate, percent log returns), reports and model files go out.  Every
subcommand is deterministic given the same inputs, config, and seed, and
rewrites its outputs atomically, so re-runs produce identical bytes.
"""

import argparse
import configparser
import csv
import datetime
import json
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import allocate, astdist, gas, moments
from .copula import (MSCopulaModel, em_fit, hamilton_filter, select_model,
                     to_correlation)
from .evaluate import (STRATEGIES, BacktestSchedule, StrategyResult,
                       _atomic_write, _pairwise_tables, derive_seeds,
                       dgt_ar_test, dgt_h_test, run_backtest, summary_stats)
from .gas import MarginalFit

MODEL_FORMAT = "dynfolio-model"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# panels


@dataclass
class ReturnsPanel:
    """Dated panel of percent log returns, one column per asset."""

    dates: list
    assets: list
    values: np.ndarray


@dataclass
class CovariatePanel:
    """Dated panel of exogenous covariates."""

    dates: list
    names: list
    values: np.ndarray


def _load_wide_csv(path, kind):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"cannot read {kind} file {path}: {exc}")
    if not rows:
        raise ValueError(f"{kind} file {path} is empty")
    header = [c.strip() for c in rows[0]]
    if not header:
        raise ValueError(f"{kind} file {path} has an empty header")
    names = header[1:]
    parsed = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ValueError(
                f"{kind} file {path}: line {lineno} has {len(row)} cells, "
                f"expected {len(header)}")
        raw_date = row[0].strip()
        try:
            key = datetime.date.fromisoformat(raw_date)
        except ValueError:
            raise ValueError(
                f"{kind} file {path}: unparsable date at line {lineno}, "
                f"column {header[0]!r}: {raw_date!r}")
        if key in seen:
            raise ValueError(f"{kind} file {path}: duplicate date {raw_date}")
        seen.add(key)
        vals = np.empty(len(names))
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                v = np.nan
            if not np.isfinite(v):
                raise ValueError(
                    f"{kind} file {path}: unparsable cell at line {lineno}, "
                    f"column {names[j]!r}: {cell.strip()!r}")
            vals[j] = v
        parsed.append((key, raw_date, vals))
    if not parsed:
        raise ValueError(f"{kind} file {path} has no data rows")
    parsed.sort(key=lambda item: item[0])
    dates = [item[1] for item in parsed]
    values = np.vstack([item[2] for item in parsed]) \
        if names else np.empty((len(parsed), 0))
    return dates, names, values


def load_returns(path):
    """Read a wide returns CSV, sorted by its ISO-8601 date column."""
    dates, assets, values = _load_wide_csv(path, "returns")
    if not assets:
        raise ValueError(f"returns file {path} needs at least one "
                         "asset column")
    return ReturnsPanel(dates=dates, assets=assets, values=values)


def load_covariates(path):
    """Read a wide covariates CSV, sorted by its ISO-8601 date column."""
    dates, names, values = _load_wide_csv(path, "covariates")
    return CovariatePanel(dates=dates, names=names, values=values)


def align_panels(returns, covariates):
    """Inner-join the two panels on dates.

    Returns (returns, covariates, n_dropped_returns, n_dropped_covariates);
    rows outside the common date range are dropped from both sides.
    """
    common = set(returns.dates) & set(covariates.dates)
    keep_r = [i for i, d in enumerate(returns.dates) if d in common]
    keep_c = [i for i, d in enumerate(covariates.dates) if d in common]
    out_r = ReturnsPanel(dates=[returns.dates[i] for i in keep_r],
                         assets=returns.assets,
                         values=returns.values[keep_r])
    out_c = CovariatePanel(dates=[covariates.dates[i] for i in keep_c],
                           names=covariates.names,
                           values=covariates.values[keep_c])
    return (out_r, out_c, len(returns.dates) - len(keep_r),
            len(covariates.dates) - len(keep_c))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond the data files themselves."""

    returns: str = ""
    covariates: str = ""
    insample_len: int = 0
    oos_len: int = 1
    refit_every: int = 24
    n_regimes: int = 2
    spec: str = "simple"
    m: int = 20
    leverage: bool = False
    copula_restarts: int = 3
    marginal_starts: int = 5
    n_draws: int = 20000
    seed: int = 0
    upsilon: tuple = (10.0,)
    order: int = 4
    strategies: tuple = STRATEGIES
    rolling_window: int = 104
    bound: float = 5.0
    n_boot: int = 2000
    output_dir: str = "."

    def validate(self):
        if self.oos_len < 1:
            raise ValueError("schedule.oos_len must be at least 1")
        if self.insample_len < 0:
            raise ValueError("schedule.insample_len must be non-negative")
        if self.refit_every < 1:
            raise ValueError("schedule.refit_every must be at least 1")
        if self.spec not in ("simple", "generalised"):
            raise ValueError(f"copula.spec must be 'simple' or "
                             f"'generalised', got {self.spec!r}")
        if self.n_regimes < 1:
            raise ValueError("copula.n_regimes must be at least 1")
        if self.m < 2:
            raise ValueError("copula.m must be at least 2")
        if self.n_draws < 1000:
            raise ValueError("simulation.n_draws must be at least 1000")
        if not self.upsilon or any(u < 1.0 for u in self.upsilon):
            raise ValueError("utility.upsilon values must be >= 1")
        if self.order not in (2, 3, 4):
            raise ValueError("utility.order must be 2, 3, or 4")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies: {sorted(unknown)}")
        if self.rolling_window < 2:
            raise ValueError("strategies.rolling_window must be at least 2")
        if self.bound <= 0.0:
            raise ValueError("strategies.bound must be positive")
        if self.n_boot < 0:
            raise ValueError("strategies.n_boot must be non-negative")
        return self


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_floats(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_names(text):
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


# (section, key) -> (RunConfig field, parser, help text)
_CONFIG_SCHEMA = {
    ("data", "returns"): ("returns", str, "path to the returns CSV"),
    ("data", "covariates"): ("covariates", str,
                             "path to the covariates CSV, blank for none"),
    ("schedule", "insample_len"): ("insample_len", int,
                                   "estimation window F; 0 derives it from "
                                   "the data"),
    ("schedule", "oos_len"): ("oos_len", int, "out-of-sample periods S"),
    ("schedule", "refit_every"): ("refit_every", int,
                                  "periods between re-estimations"),
    ("copula", "n_regimes"): ("n_regimes", int, "number of regimes"),
    ("copula", "spec"): ("spec", str, "simple or generalised loadings"),
    ("copula", "m"): ("m", int, "trailing window behind the forcing term"),
    ("copula", "leverage"): ("leverage", _parse_bool,
                             "include the leverage term"),
    ("copula", "restarts"): ("copula_restarts", int, "EM restarts"),
    ("marginal", "starts"): ("marginal_starts", int,
                             "optimizer starts per asset"),
    ("simulation", "n_draws"): ("n_draws", int,
                                "simulation size B (at least 1000)"),
    ("simulation", "seed"): ("seed", int, "master seed"),
    ("utility", "upsilon"): ("upsilon", _parse_floats,
                             "comma-separated risk aversions; backtest and "
                             "evaluate use the first"),
    ("utility", "order"): ("order", int, "Taylor order for optimize"),
    ("strategies", "enabled"): ("strategies", _parse_names,
                                "comma-separated strategy labels"),
    ("strategies", "rolling_window"): ("rolling_window", int,
                                       "lookback for NMV/NHM moments"),
    ("strategies", "bound"): ("bound", float, "per-asset weight box"),
    ("strategies", "n_boot"): ("n_boot", int, "bootstrap replicates"),
    ("output", "directory"): ("output_dir", str, "where artifacts go"),
}


def load_config(path):
    """Parse a flat sectioned config file into a RunConfig."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ValueError(f"config file {path} is malformed: {exc}")
    known = {}
    for (sec, key), (field_name, parser, _) in _CONFIG_SCHEMA.items():
        known.setdefault(sec, {})[key] = (field_name, parser)
    overrides = {}
    for sec in cp.sections():
        if sec not in known:
            raise ValueError(f"unknown config section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in known[sec]:
                raise ValueError(f"unknown config key {key!r} in [{sec}]")
            field_name, parser = known[sec][key]
            try:
                overrides[field_name] = parser(raw)
            except ValueError as exc:
                raise ValueError(f"config {sec}.{key}: {exc}")
    return RunConfig(**overrides)


def _config_epilog():
    cfg = RunConfig()
    lines = ["configuration file keys (section.key = default):"]
    for (sec, key), (field_name, _, help_text) in _CONFIG_SCHEMA.items():
        default = getattr(cfg, field_name)
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        lines.append(f"  {sec}.{key} = {default!r:<24} {help_text}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# model persistence


def save_model(path, models):
    """Write fitted models to a versioned sectioned text file.

    ``models`` maps "marginals" to a list of marginal fits and, when
    present, "copula" to the fitted switching copula.
    """
    lines = [f"{MODEL_FORMAT} version {MODEL_VERSION}"]
    for i, fit in enumerate(models.get("marginals") or []):
        lines.append(f"[marginal {i}]")
        d = fit.to_dict()
        for key in sorted(d):
            lines.append(f"{key} = {json.dumps(d[key], sort_keys=True)}")
    copula = models.get("copula")
    if copula is not None:
        lines.append("[copula]")
        d = copula.to_dict()
        for key in sorted(d):
            lines.append(f"{key} = {json.dumps(d[key], sort_keys=True)}")
    lines.append("[end]")
    _atomic_write(path, "\n".join(lines) + "\n")
    return Path(path)


_SECTION_RE = re.compile(r"^\[(marginal (\d+)|copula|end)\]$")


def load_model(path):
    """Read a model file written by :func:`save_model`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read model file {path}: {exc}")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"model file {path} is empty")
    head = re.match(rf"^{MODEL_FORMAT} version (\d+)$", lines[0])
    if head is None:
        raise ValueError(f"{path} is not a {MODEL_FORMAT} file")
    version = int(head.group(1))
    if version != MODEL_VERSION:
        raise ValueError(
            f"model file version {version} is not supported "
            f"(this build reads version {MODEL_VERSION})")
    marginals = {}
    copula_dict = None
    section = "header"
    current = None
    ended = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if ended:
            raise ValueError(f"model file {path}: content after [end] "
                             f"at line {lineno}")
        m = _SECTION_RE.match(line.strip())
        if m:
            name = m.group(1)
            if name == "end":
                ended = True
                current = None
            elif name == "copula":
                section = "copula"
                copula_dict = current = {}
            else:
                idx = int(m.group(2))
                section = f"marginal {idx}"
                marginals[idx] = current = {}
            continue
        if current is None:
            raise ValueError(f"model file {path}: unexpected line {lineno} "
                             f"outside any section")
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"model file {path}: malformed line {lineno} "
                             f"in section '{section}'")
        try:
            current[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raise ValueError(f"model file {path}: bad value for "
                             f"{key.strip()!r} in section '{section}'")
    if not ended:
        raise ValueError(f"model file {path} is truncated inside "
                         f"section '{section}'")
    out = {"marginals": [], "copula": None}
    for idx in sorted(marginals):
        try:
            out["marginals"].append(MarginalFit.from_dict(marginals[idx]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"model file {path}: section 'marginal {idx}' "
                             f"is missing field {exc}")
    if copula_dict is not None:
        try:
            out["copula"] = MSCopulaModel.from_dict(copula_dict)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"model file {path}: section 'copula' is "
                             f"missing field {exc}")
    return out


# ---------------------------------------------------------------------------
# shared plumbing


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _write_table(path, header, rows):
    body = "\n".join(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, ",".join(header) + "\n" + body + "\n")
    return Path(path)


def _write_json(path, payload):
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return Path(path)


def _resolve(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "output_dir", None) is not None:
        cfg = replace(cfg, output_dir=args.output_dir)
    cfg.validate()
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    return cfg, outdir, max(1, args.threads)


def _outpath(outdir, value, default):
    p = Path(value) if value else Path(default)
    return p if p.is_absolute() else outdir / p


def _load_aligned(cfg, args):
    """Returns panel plus optional covariates, inner-joined on dates."""
    rpath = getattr(args, "returns", None) or cfg.returns
    if not rpath:
        raise ValueError("a returns CSV is required (data.returns in the "
                         "config or --returns)")
    rp = load_returns(rpath)
    cpath = getattr(args, "covariates", None) or cfg.covariates
    if not cpath:
        return rp, None
    cp = load_covariates(cpath)
    rp, cp, dr, dc = align_panels(rp, cp)
    if dr or dc:
        print(f"date alignment dropped {dr} returns row(s) and {dc} "
              f"covariate row(s)")
    return rp, cp


def _window_len(cfg, n_rows):
    F = cfg.insample_len if cfg.insample_len > 0 else n_rows
    if F > n_rows:
        raise ValueError(f"schedule.insample_len = {F} exceeds the "
                         f"{n_rows} available rows")
    return F


def _covariate_rows(cov, dates, what):
    """Covariate rows matching ``dates`` exactly, in order."""
    index = {d: i for i, d in enumerate(cov.dates)}
    missing = [d for d in dates if d not in index]
    if missing:
        raise ValueError(f"covariates do not cover {what} date "
                         f"{missing[0]}")
    return cov.values[[index[d] for d in dates]]


def _fit_window_marginals(window, cfg):
    """Per-asset marginal fits with the backtest's first-refit seeds."""
    _, _, fit_seeds = derive_seeds(cfg.seed, cfg.oos_len)
    return [
        gas.fit_marginal(window[:, j], n_starts=cfg.marginal_starts,
                         random_state=int(fit_seeds[0]) + j)
        for j in range(window.shape[1])
    ]


def _forecast_parts(rp, cp, models, cfg, threads):
    """Filter the most recent window and produce the one-step state."""
    fits = models["marginals"]
    model = models["copula"]
    if not fits:
        raise ValueError("model file holds no marginal fits")
    if model is None:
        raise ValueError("model file holds no copula fit")
    if len(fits) != len(rp.assets):
        raise ValueError(f"model has {len(fits)} marginals but the panel "
                         f"has {len(rp.assets)} assets")
    F = _window_len(cfg, len(rp.dates))
    window = rp.values[-F:]
    dates = rp.dates[-F:]
    U = np.empty_like(window)
    nexts = []
    for j, f in enumerate(fits):
        path = gas.gas_filter(window[:, j], f.omega, f.alpha, f.beta,
                              f.tilde0, f.scaling)
        p = path.params[:-1]
        U[:, j] = astdist.cdf(window[:, j], p[:, 0], p[:, 1], p[:, 2],
                              p[:, 3])
        nexts.append(path.next_params)
    U = np.clip(U, gas.PIT_CLIP, 1.0 - gas.PIT_CLIP)
    X = _covariate_rows(cp, dates, "window") if cp is not None else None
    filt = hamilton_filter(U, X, model)
    state = filt.final_state(model)
    return nexts, model, state, dates[-1]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_fit_marginals(args):
    cfg, outdir, _ = _resolve(args)
    rp, _ = _load_aligned(cfg, args)
    F = _window_len(cfg, len(rp.dates))
    fits = _fit_window_marginals(rp.values[:F], cfg)
    path = save_model(_outpath(outdir, args.output, "marginals.txt"),
                      {"marginals": fits})
    for asset, fit in zip(rp.assets, fits):
        print(f"{asset}: loglik {fit.loglik:.6f} converged {fit.converged}")
    print(f"wrote {path}")
    return 0


def _cmd_pit(args):
    cfg, outdir, _ = _resolve(args)
    rp, _ = _load_aligned(cfg, args)
    models = load_model(_outpath(outdir, args.model, "marginals.txt"))
    fits = models["marginals"]
    if len(fits) != len(rp.assets):
        raise ValueError(f"model has {len(fits)} marginals but the panel "
                         f"has {len(rp.assets)} assets")
    F = _window_len(cfg, len(rp.dates))
    window = rp.values[:F]
    U = np.column_stack([gas.pit_transform(window[:, j], fits[j])
                         for j in range(window.shape[1])])
    path = _write_table(
        _outpath(outdir, args.output, "pits.csv"), ["date"] + rp.assets,
        [[d] + list(row) for d, row in zip(rp.dates[:F], U)])
    print(f"wrote {path}")
    return 0


def _cmd_fit_copula(args):
    cfg, outdir, threads = _resolve(args)
    dates, names, U = _load_wide_csv(
        _outpath(outdir, args.pits, "pits.csv"), "pits")
    models = load_model(_outpath(outdir, args.model, "marginals.txt"))
    cpath = getattr(args, "covariates", None) or cfg.covariates
    X = None
    if cpath:
        X = _covariate_rows(load_covariates(cpath), dates, "PIT panel")
    _, _, fit_seeds = derive_seeds(cfg.seed, cfg.oos_len)
    copula = em_fit(U, X, n_regimes=cfg.n_regimes, spec=cfg.spec, m=cfg.m,
                    leverage=cfg.leverage, n_restarts=cfg.copula_restarts,
                    random_state=int(fit_seeds[0]), n_jobs=threads)
    path = save_model(_outpath(outdir, args.output, "model.txt"),
                      {"marginals": models["marginals"], "copula": copula})
    print(f"loglik {copula.loglik:.6f} aic {copula.aic:.6f} "
          f"bic {copula.bic:.6f}")
    print(f"wrote {path}")
    return 0


def _cmd_select(args):
    cfg, outdir, threads = _resolve(args)
    dates, names, U = _load_wide_csv(
        _outpath(outdir, args.pits, "pits.csv"), "pits")
    cpath = getattr(args, "covariates", None) or cfg.covariates
    X = None
    if cpath:
        X = _covariate_rows(load_covariates(cpath), dates, "PIT panel")
    _, _, fit_seeds = derive_seeds(cfg.seed, cfg.oos_len)
    table, _ = select_model(U, X, m=cfg.m, random_state=int(fit_seeds[0]),
                            n_jobs=threads, n_restarts=args.restarts)
    header = ["n_regimes", "spec", "covariates", "n_params", "loglik",
              "aic", "bic"]
    path = _write_table(_outpath(outdir, args.output, "select.csv"), header,
                        [[row[c] for c in header] for row in table])
    best = table[0]
    print(f"best by BIC: {best['n_regimes']} regime(s), {best['spec']}, "
          f"covariates={best['covariates']}")
    print(f"wrote {path}")
    return 0


def _cmd_forecast(args):
    cfg, outdir, threads = _resolve(args)
    rp, cp = _load_aligned(cfg, args)
    models = load_model(_outpath(outdir, args.model, "model.txt"))
    nexts, model, state, last_date = _forecast_parts(rp, cp, models, cfg,
                                                     threads)
    payload = {
        "as_of": last_date,
        "assets": rp.assets,
        "marginal_next": [
            {"mu": p.mu, "sigma": p.sigma, "gamma": p.gamma, "nu": p.nu}
            for p in nexts],
        "regime_predicted": state.predicted.tolist(),
        "regime_filtered": state.filtered.tolist(),
        "nu_c": [r.nu_c for r in model.regimes],
        "correlation_next": [to_correlation(state.C[s]).tolist()
                             for s in range(state.C.shape[0])],
    }
    path = _write_json(_outpath(outdir, args.output, "forecast.json"),
                       payload)
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args):
    cfg, outdir, threads = _resolve(args)
    rp, cp = _load_aligned(cfg, args)
    models = load_model(_outpath(outdir, args.model, "model.txt"))
    nexts, model, state, _ = _forecast_parts(rp, cp, models, cfg, threads)
    n_draws = args.draws if args.draws else cfg.n_draws
    if n_draws < 1:
        raise ValueError("--draws must be at least 1")
    draws = moments.simulate_joint(nexts, model, state, n_draws=n_draws,
                                   random_state=cfg.seed, n_jobs=threads)
    path = _write_table(_outpath(outdir, args.output, "draws.csv"),
                        rp.assets, draws)
    print(f"wrote {path} ({draws.shape[0]} x {draws.shape[1]})")
    return 0


def _cmd_optimize(args):
    cfg, outdir, threads = _resolve(args)
    rp, cp = _load_aligned(cfg, args)
    models = load_model(_outpath(outdir, args.model, "model.txt"))
    nexts, model, state, _ = _forecast_parts(rp, cp, models, cfg, threads)
    n_draws = args.draws if args.draws else cfg.n_draws
    draws = moments.simulate_joint(nexts, model, state, n_draws=n_draws,
                                   random_state=cfg.seed, n_jobs=threads)
    tensors = moments.moment_tensors(draws / 100.0, seed=cfg.seed)
    rows = []
    for upsilon in cfg.upsilon:
        w = allocate.optimize_weights(tensors, upsilon, order=cfg.order,
                                      bound=cfg.bound,
                                      random_state=cfg.seed)
        rows.append([upsilon] + list(w.weights)
                    + [w.objective, w.gradient_norm, w.boundary])
    header = (["upsilon"] + [f"w_{a}" for a in rp.assets]
              + ["objective", "gradient_norm", "boundary"])
    path = _write_table(_outpath(outdir, args.output, "weights.csv"),
                        header, rows)
    print(f"wrote {path}")
    return 0


def _cmd_backtest(args):
    cfg, outdir, threads = _resolve(args)
    rp, cp = _load_aligned(cfg, args)
    T = len(rp.dates)
    F = cfg.insample_len if cfg.insample_len > 0 else T - cfg.oos_len
    schedule = BacktestSchedule(insample_len=F, oos_len=cfg.oos_len,
                                refit_every=cfg.refit_every)
    report = run_backtest(
        rp.values, covariates=None if cp is None else cp.values,
        schedule=schedule, strategies=cfg.strategies,
        upsilon=cfg.upsilon[0], n_draws=cfg.n_draws,
        n_regimes=cfg.n_regimes, spec=cfg.spec, m=cfg.m,
        leverage=cfg.leverage, rolling_window=cfg.rolling_window,
        bound=cfg.bound, marginal_starts=cfg.marginal_starts,
        copula_restarts=cfg.copula_restarts, n_boot=cfg.n_boot,
        random_state=cfg.seed, n_jobs=threads, dates=rp.dates)
    written = report.save(outdir)
    if report.first_fit:
        written.append(save_model(outdir / "model.txt", report.first_fit))
    for label, res in report.strategies.items():
        print(f"{label}: mean return {np.mean(res.returns):+.4f}%  "
              f"mean utility {np.nanmean(res.utilities):.6f}  "
              f"excluded {res.n_excluded}")
    print(f"refits: {report.n_refits}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_evaluate(args):
    cfg, outdir, _ = _resolve(args)
    report_dir = Path(args.report_dir) if args.report_dir else outdir
    files = sorted(report_dir.glob("strategy_*.csv"))
    if not files:
        raise ValueError(f"no strategy_*.csv files under {report_dir}")
    results = {}
    for path in files:
        label = path.stem[len("strategy_"):]
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        try:
            rcol = header.index("return")
        except ValueError:
            raise ValueError(f"{path} has no 'return' column")
        rets = np.array([float(r[rcol]) for r in body])
        results[label] = StrategyResult(
            label=label, weights=np.zeros((rets.shape[0], 1)),
            returns=rets, utilities=np.full(rets.shape[0], np.nan))
    order = {lab: i for i, lab in enumerate(STRATEGIES)}
    labels = sorted(results, key=lambda lab: (order.get(lab, len(order)),
                                              lab))
    results = {lab: results[lab] for lab in labels}
    upsilon = cfg.upsilon[0]
    fee, fee_p, msr, msr_p = _pairwise_tables(
        results, upsilon, cfg.n_boot, np.random.default_rng(cfg.seed))
    payload = {
        "labels": labels,
        "upsilon": upsilon,
        "n_boot": cfg.n_boot,
        "seed": cfg.seed,
        "management_fee": fee.values.tolist(),
        "fee_pvalue": fee_p.values.tolist(),
        "modified_sharpe": msr.values.tolist(),
        "msr_pvalue": msr_p.values.tolist(),
    }
    path = _write_json(_outpath(outdir, args.output, "evaluation.json"),
                       payload)
    print(f"wrote {path}")
    return 0


def _cmd_gof(args):
    cfg, outdir, _ = _resolve(args)
    dates, names, U = _load_wide_csv(
        _outpath(outdir, args.pits, "pits.csv"), "pits")
    rows = []
    for j, name in enumerate(names):
        u = U[:, j]
        rows.append([name] + [dgt_ar_test(u, k=k) for k in (1, 2, 3, 4)]
                    + [dgt_h_test(u)])
    header = ["asset", "dgt_ar_1", "dgt_ar_2", "dgt_ar_3", "dgt_ar_4",
              "dgt_h"]
    path = _write_table(_outpath(outdir, args.output, "gof.csv"), header,
                        rows)
    print(f"wrote {path}")
    return 0


def _cmd_summary_stats(args):
    cfg, outdir, _ = _resolve(args)
    rp, _ = _load_aligned(cfg, args)
    table = summary_stats(rp.values, names=rp.assets)
    rows = [[name] + [table.loc[name, c] for c in table.columns]
            for name in table.index]
    path = _write_table(_outpath(outdir, args.output, "summary.csv"),
                        ["asset"] + list(table.columns), rows)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the run configuration")
    common.add_argument("--seed", type=int,
                        help="master seed, overrides simulation.seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for fitting and simulation")
    common.add_argument("--output-dir",
                        help="artifact directory, overrides "
                             "output.directory")

    parser = argparse.ArgumentParser(
        prog="dynfolio",
        description="Score-driven marginals, switching-copula "
                    "correlations, and moment-based allocation.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text,
                           description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("fit-marginals", _cmd_fit_marginals,
            "fit one score-driven marginal per asset on the estimation "
            "window")
    p.add_argument("--returns", help="returns CSV, overrides data.returns")
    p.add_argument("--covariates")
    p.add_argument("--output", help="model file (default marginals.txt)")

    p = add("pit", _cmd_pit,
            "probability integral transforms of the estimation window")
    p.add_argument("--returns")
    p.add_argument("--covariates")
    p.add_argument("--model", help="marginals file (default marginals.txt)")
    p.add_argument("--output", help="PIT CSV (default pits.csv)")

    p = add("fit-copula", _cmd_fit_copula,
            "fit the regime-switching copula on a PIT panel")
    p.add_argument("--pits", help="PIT CSV (default pits.csv)")
    p.add_argument("--covariates")
    p.add_argument("--model", help="marginals file folded into the output")
    p.add_argument("--output", help="model file (default model.txt)")

    p = add("select", _cmd_select,
            "fit the regime/spec/covariate grid and rank by BIC")
    p.add_argument("--pits")
    p.add_argument("--covariates")
    p.add_argument("--restarts", type=int, default=1,
                   help="EM restarts per cell (default 1)")
    p.add_argument("--output", help="grid table (default select.csv)")

    p = add("forecast", _cmd_forecast,
            "one-step-ahead marginal parameters and regime state")
    p.add_argument("--returns")
    p.add_argument("--covariates")
    p.add_argument("--model")
    p.add_argument("--output", help="default forecast.json")

    p = add("simulate", _cmd_simulate,
            "draw from the one-step joint return distribution")
    p.add_argument("--returns")
    p.add_argument("--covariates")
    p.add_argument("--model")
    p.add_argument("--draws", type=int,
                   help="number of draws (default simulation.n_draws)")
    p.add_argument("--output", help="default draws.csv")

    p = add("optimize", _cmd_optimize,
            "expected-utility weights for each configured risk aversion")
    p.add_argument("--returns")
    p.add_argument("--covariates")
    p.add_argument("--model")
    p.add_argument("--draws", type=int)
    p.add_argument("--output", help="default weights.csv")

    p = add("backtest", _cmd_backtest,
            "walk the full pipeline out of sample and write the report")
    p.add_argument("--returns")
    p.add_argument("--covariates")

    p = add("evaluate", _cmd_evaluate,
            "fee and modified-Sharpe tables from saved strategy paths")
    p.add_argument("--report-dir",
                   help="directory with strategy_*.csv (default the "
                        "output directory)")
    p.add_argument("--output", help="default evaluation.json")

    p = add("gof", _cmd_gof,
            "serial-correlation and histogram calibration tests on PITs")
    p.add_argument("--pits")
    p.add_argument("--output", help="default gof.csv")

    p = add("summary-stats", _cmd_summary_stats,
            "descriptive statistics of the return panel")
    p.add_argument("--returns")
    p.add_argument("--covariates")
    p.add_argument("--output", help="default summary.csv")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
