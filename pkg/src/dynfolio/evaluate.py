"""Out-of-sample backtesting, competitor strategies, and evaluation.

The harness walks a fixed moving window over the return panel: models are
re-estimated on a coarse schedule, filters advance every period, and each
strategy turns the one-step-ahead view into weights.  Economic value is
measured by management fees and modified Sharpe ratios with circular
block-bootstrap p-values; density calibration by serial-correlation and
histogram tests on the probability integral transforms.

Returns enter in percent; utilities and fees convert to fractions of
wealth internally (divide by 100) so CRRA arguments stay near 1.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit
from scipy import stats
from scipy.optimize import brentq, minimize

from . import allocate, astdist, gas, moments
from .copula import em_fit, hamilton_filter
from .validation import as_panel, as_series, check_unit_interval

STRATEGIES = ("EW", "MV", "DCC", "NMV", "NHM", "FDDM")

DEFAULT_BOOT = 2000
ROLLING_WINDOW = 104


# ---------------------------------------------------------------------------
# economic-value metrics


def management_fee(returns_a, returns_b, upsilon):
    """Fee an investor holding A would pay to switch to B.

    Solves mean U(1 + y_A) = mean U(1 + y_B - fee) for the fee, so a
    positive value means B is preferred.  Returns are fractions of
    wealth.  Identical inputs short-circuit to exactly zero.
    """
    a = as_series(returns_a, "returns_a", min_len=1)
    b = as_series(returns_b, "returns_b", min_len=1)
    if a.shape != b.shape:
        raise ValueError("return series must have equal length")
    if np.array_equal(a, b):
        return 0.0
    if np.any(1.0 + a <= 0.0):
        raise ValueError("portfolio A is ruined in some period")
    target = allocate.crra_utility(1.0 + a, upsilon).mean()

    # mean utility of B is strictly decreasing in the fee
    def gap(fee):
        return allocate.crra_utility(1.0 + b - fee, upsilon).mean() - target

    # upper end: walk toward the ruin pole of B until the sign flips,
    # retreating when the utility overflows; brentq needs finite ends
    min_wealth = float(np.min(1.0 + b))
    floor = 1e-9 * max(min_wealth, 1.0)
    upper = None
    with np.errstate(over="ignore"):
        # probing toward the pole overflows by design; retreat on inf
        for _ in range(120):
            if not 1e-300 < floor < min_wealth:
                break
            val = gap(min_wealth - floor)
            if np.isfinite(val) and val <= 0.0:
                upper = min_wealth - floor
                break
            floor = floor * 10.0 if not np.isfinite(val) else floor * 1e-3
    if upper is None:
        raise ValueError("management fee bracket could not be resolved")
    lo = min(-1.0, upper - 1.0)
    for _ in range(200):
        if gap(lo) > 0.0:
            break
        lo = lo * 2.0 if lo < 0 else lo - 1.0
    else:
        raise ValueError("failed to bracket the management fee")
    return brentq(gap, lo, upper, xtol=1e-12)


def modified_sharpe(returns_a, returns_b):
    """(sigma_A / sigma_B) * mu_B - mu_A; positive means B preferred."""
    a = as_series(returns_a, "returns_a", min_len=2)
    b = as_series(returns_b, "returns_b", min_len=2)
    if a.shape != b.shape:
        raise ValueError("return series must have equal length")
    sd_a, sd_b = a.std(), b.std()
    if sd_a == 0.0 or sd_b == 0.0:
        raise ValueError("return series must have positive dispersion")
    return float(sd_a / sd_b * b.mean() - a.mean())


def block_bootstrap_pvalue(statistic, returns_a, returns_b, block_len=None,
                           n_boot=DEFAULT_BOOT, random_state=None):
    """Two-sided circular block-bootstrap p-value against zero.

    Pairs are resampled jointly in wrapped blocks, the statistic is
    recentered at its sample value, and the p-value counts replicates at
    least as extreme, with the usual +1 correction.
    """
    a = as_series(returns_a, "returns_a", min_len=2)
    b = as_series(returns_b, "returns_b", min_len=2)
    if a.shape != b.shape:
        raise ValueError("return series must have equal length")
    n = a.shape[0]
    if block_len is None:
        block_len = int(np.ceil(n ** (1.0 / 3.0)))
    if block_len < 1 or block_len > n:
        raise ValueError(f"block_len must be in [1, {n}]")
    theta = statistic(a, b)
    rng = np.random.default_rng(random_state)
    n_blocks = -(-n // block_len)
    offsets = np.arange(block_len)
    hits = 0
    for _ in range(n_boot):
        starts = rng.integers(0, n, size=n_blocks)
        idx = ((starts[:, None] + offsets) % n).ravel()[:n]
        if abs(statistic(a[idx], b[idx]) - theta) >= abs(theta):
            hits += 1
    return (1.0 + hits) / (n_boot + 1.0)


# ---------------------------------------------------------------------------
# goodness of fit


def dgt_ar_test(pits, k=1, lags=20):
    """Serial-correlation LM statistic (T - lags) * R^2 for PIT powers.

    Regresses (u - mean(u)) ** k on its own lags; under a correct model
    the statistic is chi-squared with ``lags`` degrees of freedom (5%
    critical value about 31.4 at the default 20 lags).
    """
    u = as_series(pits, "pits", min_len=lags + 2)
    if k not in (1, 2, 3, 4):
        raise ValueError(f"k must be in 1..4, got {k}")
    x = (u - u.mean()) ** k
    if np.ptp(x) == 0.0:
        raise ValueError("PIT series is degenerate (constant regressand)")
    T = x.shape[0]
    y = x[lags:]
    design = np.column_stack(
        [np.ones(T - lags)] + [x[lags - j:T - j] for j in range(1, lags + 1)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / sst
    return float((T - lags) * r2)


def dgt_h_test(pits, n_bins=20):
    """Histogram uniformity statistic sum (n_q - T/G)^2 / (T/G).

    Compared to chi-squared with G - 1 degrees of freedom.
    """
    u = as_series(pits, "pits", min_len=1)
    check_unit_interval(u, "pits", open_interval=False)
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    counts, _ = np.histogram(u, bins=n_bins, range=(0.0, 1.0))
    expected = u.shape[0] / n_bins
    return float(np.sum((counts - expected) ** 2) / expected)


def kendall_tau(x, y):
    """Kendall rank correlation."""
    x = as_series(x, "x", min_len=2)
    y = as_series(y, "y", min_len=2)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    return float(stats.kendalltau(x, y).statistic)


def summary_stats(panel, names=None):
    """Per-column descriptive statistics table.

    Includes the Jarque-Bera statistic and the 1% empirical quantile
    alongside the first four moments.
    """
    panel = as_panel(panel, "panel", min_rows=8)
    if names is None:
        names = [f"asset_{i}" for i in range(panel.shape[1])]
    rows = {}
    for name, col in zip(names, panel.T):
        jb = stats.jarque_bera(col)
        rows[name] = {
            "mean": col.mean(),
            "std": col.std(ddof=1),
            "skewness": stats.skew(col),
            "kurtosis": stats.kurtosis(col, fisher=False),
            "min": col.min(),
            "max": col.max(),
            "q01": np.quantile(col, 0.01),
            "jb_stat": jb.statistic,
            "jb_pvalue": jb.pvalue,
        }
    return pd.DataFrame(rows).T


# ---------------------------------------------------------------------------
# Gaussian GARCH(1,1) + DCC(1,1) baseline


@njit(cache=True)
def _garch_negll(e, omega, alpha, beta, h0):
    T = e.shape[0]
    h = h0
    nll = 0.0
    for t in range(T):
        nll += 0.5 * (np.log(h) + e[t] * e[t] / h)
        h = omega + alpha * e[t] * e[t] + beta * h
        if h < 1e-300:
            h = 1e-300
    return nll


@njit(cache=True)
def _garch_path(e, omega, alpha, beta, h0):
    T = e.shape[0]
    h = np.empty(T + 1)
    h[0] = h0
    for t in range(T):
        h[t + 1] = omega + alpha * e[t] * e[t] + beta * h[t]
        if h[t + 1] < 1e-300:
            h[t + 1] = 1e-300
    return h


@njit(cache=True)
def _dcc_negll(Z, qbar, a, b):
    T, N = Z.shape
    Q = qbar.copy()
    R = np.empty((N, N))
    nll = 0.0
    for t in range(T):
        if not np.all(np.isfinite(Q)):
            return 1e12
        d = np.sqrt(np.diag(Q))
        for i in range(N):
            for j in range(N):
                R[i, j] = Q[i, j] / (d[i] * d[j])
        sign, logdet = np.linalg.slogdet(R)
        if sign <= 0.0:
            return 1e12
        z = Z[t]
        quad = z @ np.linalg.solve(R, z)
        nll += 0.5 * (logdet + quad - z @ z)
        Q = ((1.0 - a - b) * qbar
             + a * (z.reshape(-1, 1) * z.reshape(1, -1)) + b * Q)
    return nll


@njit(cache=True)
def _dcc_q_forecast(Z, qbar, a, b):
    T = Z.shape[0]
    Q = qbar.copy()
    for t in range(T):
        z = Z[t]
        Q = ((1.0 - a - b) * qbar
             + a * (z.reshape(-1, 1) * z.reshape(1, -1)) + b * Q)
    return Q


def garch11_fit(y):
    """Gaussian quasi-ML GARCH(1,1) with a constant mean.

    Returns a parameter dict; ``refit`` of the variance path on new data
    reuses these numbers through :func:`garch11_filter`.
    """
    y = as_series(y, "y", min_len=30)
    mu = y.mean()
    e = y - mu
    v = e.var()
    h0 = v

    def negll(x):
        omega, alpha, beta = x
        pen = 0.0
        if alpha + beta > 0.999:
            pen = 1e6 * (alpha + beta - 0.999) ** 2
        return _garch_negll(e, omega, alpha, beta, h0) + pen

    best = None
    for start in ((0.05 * v, 0.05, 0.90), (0.2 * v, 0.10, 0.80)):
        res = minimize(negll, start, method="L-BFGS-B",
                       bounds=[(1e-8 * v, 10.0 * v), (0.0, 0.999),
                               (0.0, 0.999)])
        if best is None or res.fun < best.fun:
            best = res
    omega, alpha, beta = best.x
    return {"mu": float(mu), "omega": float(omega), "alpha": float(alpha),
            "beta": float(beta)}


def garch11_filter(y, params):
    """Variance path and forecast under frozen GARCH parameters.

    Returns (h, z): h has length T + 1 with the one-step forecast last,
    z are the standardized residuals.
    """
    y = as_series(y, "y", min_len=2)
    e = y - params["mu"]
    h = _garch_path(e, params["omega"], params["alpha"], params["beta"],
                    e.var())
    z = e / np.sqrt(h[:-1])
    return h, z


def dcc11_fit(Z):
    """Correlation-targeting DCC(1,1) by Gaussian quasi-ML."""
    Z = as_panel(Z, "Z", min_rows=30)
    qbar = np.corrcoef(Z, rowvar=False)

    def negll(x):
        a, b = x
        # the recursion diverges outside the stationarity region
        if a + b >= 0.999:
            return 1e10 * (1.0 + a + b)
        return _dcc_negll(Z, qbar, a, b)

    best = None
    for start in ((0.02, 0.95), (0.05, 0.85)):
        res = minimize(negll, start, method="L-BFGS-B",
                       bounds=[(1e-6, 0.999), (1e-6, 0.999)])
        if best is None or res.fun < best.fun:
            best = res
    a, b = best.x
    return {"a": float(a), "b": float(b), "qbar": qbar}


def gaussian_dcc_fit(window):
    """Two-step QML: per-asset GARCH(1,1), then DCC(1,1) on residuals."""
    window = as_panel(window, "window", min_rows=30)
    garch = [garch11_fit(window[:, i]) for i in range(window.shape[1])]
    Z = np.column_stack(
        [garch11_filter(window[:, i], garch[i])[1]
         for i in range(window.shape[1])])
    return {"garch": garch, "dcc": dcc11_fit(Z)}


def gaussian_dcc_forecast(window, params):
    """One-step mean vector and covariance forecast under frozen params."""
    window = as_panel(window, "window", min_rows=2,
                      n_cols=len(params["garch"]))
    n = window.shape[1]
    h_next = np.empty(n)
    Z = np.empty_like(window)
    for i in range(n):
        h, z = garch11_filter(window[:, i], params["garch"][i])
        h_next[i] = h[-1]
        Z[:, i] = z
    dcc = params["dcc"]
    Q = _dcc_q_forecast(Z, dcc["qbar"], dcc["a"], dcc["b"])
    d = np.sqrt(np.diag(Q))
    R = Q / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    vol = np.sqrt(h_next)
    H = R * np.outer(vol, vol)
    mu = np.array([g["mu"] for g in params["garch"]])
    return mu, H


def min_variance_weights(cov):
    """Closed-form minimum-variance weights under the budget constraint."""
    cov = np.asarray(cov, dtype=float)
    ones = np.ones(cov.shape[0])
    w = np.linalg.solve(cov, ones)
    return w / w.sum()


# ---------------------------------------------------------------------------
# backtest harness


@dataclass
class BacktestSchedule:
    """Fixed moving estimation window walked across the sample."""

    insample_len: int
    oos_len: int
    refit_every: int = 24
    window: str = "fixed-moving"

    def __post_init__(self):
        if self.window != "fixed-moving":
            raise ValueError(f"unknown window scheme {self.window!r}")
        if self.refit_every < 1:
            raise ValueError("refit_every must be at least 1")
        if self.insample_len < 1 or self.oos_len < 1:
            raise ValueError("window lengths must be positive")

    def check_span(self, n_obs):
        if self.insample_len + self.oos_len > n_obs:
            raise ValueError(
                f"schedule needs {self.insample_len + self.oos_len} rows, "
                f"panel has {n_obs}")


@dataclass
class StrategyResult:
    """One strategy's out-of-sample path."""

    label: str
    weights: np.ndarray      # (S, N)
    returns: np.ndarray      # (S,) realized portfolio returns, percent
    utilities: np.ndarray    # (S,) CRRA of 1 + r/100; NaN where ruined
    n_excluded: int = 0


@dataclass
class BacktestReport:
    """Everything the out-of-sample experiment produced."""

    schedule: BacktestSchedule
    upsilon: float
    seed: object
    strategies: dict
    fee: pd.DataFrame
    fee_pvalue: pd.DataFrame
    msr: pd.DataFrame
    msr_pvalue: pd.DataFrame
    gof: pd.DataFrame
    n_refits: int
    dates: list = field(default_factory=list)
    first_fit: dict = field(default_factory=dict)

    def summary(self):
        labels = list(self.strategies)
        out = {
            "upsilon": self.upsilon,
            "seed": self.seed,
            "schedule": {
                "insample_len": self.schedule.insample_len,
                "oos_len": self.schedule.oos_len,
                "refit_every": self.schedule.refit_every,
                "window": self.schedule.window,
            },
            "n_refits": self.n_refits,
            "mean_return": {k: float(np.mean(v.returns))
                            for k, v in self.strategies.items()},
            "mean_utility": {k: float(np.nanmean(v.utilities))
                             for k, v in self.strategies.items()},
            "excluded_periods": {k: v.n_excluded
                                 for k, v in self.strategies.items()},
            "average_weights": {k: v.weights.mean(axis=0).tolist()
                                for k, v in self.strategies.items()},
            "management_fee": self.fee.loc[labels, labels].values.tolist(),
            "fee_pvalue": self.fee_pvalue.loc[labels, labels].values.tolist(),
            "modified_sharpe": self.msr.loc[labels, labels].values.tolist(),
            "msr_pvalue": self.msr_pvalue.loc[labels, labels].values.tolist(),
            "strategy_order": labels,
            "gof": {c: self.gof[c].tolist() for c in self.gof.columns},
            "gof_assets": list(self.gof.index),
        }
        return out

    def save(self, directory):
        """Write per-period CSVs plus a JSON summary, atomically."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for label, res in self.strategies.items():
            path = directory / f"strategy_{label}.csv"
            n = res.weights.shape[1]
            header = ",".join(
                ["period"] + [f"w{i}" for i in range(n)]
                + ["return", "utility"])
            body = np.column_stack([
                np.arange(res.returns.shape[0]), res.weights,
                res.returns, res.utilities])
            _atomic_write(path, header + "\n" + "\n".join(
                ",".join(repr(float(v)) for v in row) for row in body) + "\n")
            written.append(path)
        summary_path = directory / "report.json"
        _atomic_write(summary_path,
                      json.dumps(self.summary(), sort_keys=True, indent=2)
                      + "\n")
        written.append(summary_path)
        return written


def _atomic_write(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def derive_seeds(random_state, oos_len):
    """Sub-streams the backtest draws from its master seed.

    Returns (sim_seeds, opt_seeds, fit_seeds): per-step simulation seeds,
    per-step-per-strategy optimizer seeds, and per-step refit seeds.  The
    standalone fitting commands use the same derivation so their outputs
    agree with the backtest's internal first refit.
    """
    master = np.random.default_rng(random_state)
    sim_seeds = master.integers(2 ** 63, size=oos_len)
    opt_seeds = master.integers(2 ** 63, size=(oos_len, len(STRATEGIES)))
    fit_seeds = master.integers(2 ** 63, size=oos_len)
    return sim_seeds, opt_seeds, fit_seeds


def _pit_panel(window, fits):
    """PITs of the window and next-step parameters per asset."""
    T, n = window.shape
    U = np.empty((T, n))
    nexts = []
    for i in range(n):
        f = fits[i]
        path = gas.gas_filter(window[:, i], f.omega, f.alpha, f.beta,
                              f.tilde0, f.scaling)
        p = path.params[:-1]
        U[:, i] = astdist.cdf(window[:, i], p[:, 0], p[:, 1], p[:, 2],
                              p[:, 3])
        nexts.append(path.next_params)
    return np.clip(U, gas.PIT_CLIP, 1.0 - gas.PIT_CLIP), nexts


def _zero_pad_tensors(mu, cov):
    n = mu.shape[0]
    return moments.MomentTensors(mu, cov, np.zeros((n, n * n)),
                                 np.zeros((n, n ** 3)), n_draws=0)


def run_backtest(returns, covariates=None, schedule=None,
                 strategies=STRATEGIES, upsilon=10.0, n_draws=20000,
                 n_regimes=2, spec="simple", m=20, leverage=False,
                 rolling_window=ROLLING_WINDOW, bound=allocate.WEIGHT_BOUND,
                 marginal_starts=5, copula_restarts=3, n_boot=DEFAULT_BOOT,
                 random_state=0, n_jobs=1, dates=None):
    """Walk the forecasting and allocation pipeline over the sample.

    Parameters
    ----------
    returns : (T, N) panel of percent log returns.
    covariates : (T, p) panel aligned with ``returns``, optional.
    schedule : BacktestSchedule
    strategies : subset of ``STRATEGIES``.
    upsilon : risk aversion used for allocation, utilities, and fees.
    n_draws : simulation size behind the model strategy's tensors.
    n_regimes, spec, m, leverage : copula configuration.
    rolling_window : lookback for the naive moment strategies.
    marginal_starts, copula_restarts : effort on initial fits; refits
        warm-start from the previous parameters.
    n_boot : bootstrap replicates for the p-value tables.
    random_state : master seed; every stochastic step derives from it.
    dates : optional per-row labels used in error messages and output.

    Returns
    -------
    BacktestReport
    """
    returns = np.asarray(returns, dtype=float)
    if returns.ndim == 1:
        returns = returns[:, None]
    if returns.ndim != 2:
        raise ValueError(f"returns must be two-dimensional, "
                         f"got shape {returns.shape}")
    T, n_assets = returns.shape
    if dates is not None:
        dates = [str(d) for d in dates]
        if len(dates) != T:
            raise ValueError("dates and returns must have equal length")
    bad = ~np.isfinite(returns)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        label = dates[row] if dates else f"row {row}"
        raise ValueError(f"missing return value at {label}")
    returns = as_panel(returns, "returns", min_rows=2)
    if covariates is not None:
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.ndim != 2 or covariates.shape[0] != T:
            raise ValueError("covariates and returns must align row by row")
        badx = ~np.isfinite(covariates)
        if badx.any():
            row = int(np.argwhere(badx.any(axis=1))[0, 0])
            label = dates[row] if dates else f"row {row}"
            raise ValueError(f"missing covariate value at {label}")
        covariates = as_panel(covariates, "covariates", min_rows=T)
    if schedule is None:
        raise ValueError("a BacktestSchedule is required")
    schedule.check_span(T)
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies: {sorted(unknown)}")
    strategies = [s for s in STRATEGIES if s in strategies]
    if not strategies:
        raise ValueError("at least one strategy is required")

    F, S = schedule.insample_len, schedule.oos_len
    sim_seeds, opt_seeds, fit_seeds = derive_seeds(random_state, S)

    weights = {s: np.empty((S, n_assets)) for s in strategies}
    realized = {s: np.empty(S) for s in strategies}

    marginal_fits = None
    copula_model = None
    dcc_params = None
    mv_weights = None
    pit_oos = np.empty((S, n_assets)) if "FDDM" in strategies else None
    n_refits = 0
    first_fit = {}

    need_model = "FDDM" in strategies
    for s in range(S):
        i = F + s
        window = returns[i - F:i]
        X_window = covariates[i - F:i] if covariates is not None else None
        refit = s % schedule.refit_every == 0

        if refit:
            n_refits += 1
            if need_model:
                marginal_fits = [
                    gas.fit_marginal(
                        window[:, j], n_starts=marginal_starts,
                        random_state=int(fit_seeds[s]) + j,
                        warm_start=None if marginal_fits is None
                        else marginal_fits[j])
                    for j in range(n_assets)]
                U, _ = _pit_panel(window, marginal_fits)
                copula_model = em_fit(
                    U, X_window, n_regimes=n_regimes, spec=spec, m=m,
                    leverage=leverage,
                    n_restarts=1 if copula_model is not None
                    else copula_restarts,
                    random_state=int(fit_seeds[s]), n_jobs=n_jobs,
                    warm_start=copula_model)
                if not first_fit:
                    first_fit = {"marginals": list(marginal_fits),
                                 "copula": copula_model}
            if "DCC" in strategies:
                dcc_params = gaussian_dcc_fit(window)
            if "MV" in strategies and mv_weights is None:
                mv_weights = min_variance_weights(
                    np.cov(window, rowvar=False))

        if need_model:
            U, nexts = _pit_panel(window, marginal_fits)
            filt = hamilton_filter(U, X_window, copula_model)
            state = filt.final_state(copula_model)
            draws = moments.simulate_joint(
                nexts, copula_model, state, n_draws=n_draws,
                random_state=int(sim_seeds[s]), n_jobs=n_jobs)
            model_tensors = moments.moment_tensors(draws / 100.0,
                                                   seed=int(sim_seeds[s]))
            for j, p in enumerate(nexts):
                pit_oos[s, j] = astdist.cdf(returns[i, j], *p)

        for k, label in enumerate(STRATEGIES):
            if label not in strategies:
                continue
            if label == "EW":
                lam = np.full(n_assets, 1.0 / n_assets)
            elif label == "MV":
                lam = mv_weights
            elif label == "DCC":
                mu, H = gaussian_dcc_forecast(window, dcc_params)
                t = _zero_pad_tensors(mu / 100.0, H / 10000.0)
                lam = allocate.optimize_weights(
                    t, upsilon, order=2, bound=bound,
                    random_state=int(opt_seeds[s, k])).weights
            elif label in ("NMV", "NHM"):
                tail = window[-min(rolling_window, F):]
                t = moments.moment_tensors(tail / 100.0)
                order = 2 if label == "NMV" else 4
                lam = allocate.optimize_weights(
                    t, upsilon, order=order, bound=bound,
                    random_state=int(opt_seeds[s, k])).weights
            else:
                lam = allocate.optimize_weights(
                    model_tensors, upsilon, order=4, bound=bound,
                    random_state=int(opt_seeds[s, k])).weights
            weights[label][s] = lam
            realized[label][s] = lam @ returns[i]

    results = {}
    for label in strategies:
        wealth = 1.0 + realized[label] / 100.0
        ok = wealth > 0.0
        utils = np.full(S, np.nan)
        if ok.any():
            utils[ok] = allocate.crra_utility(wealth[ok], upsilon)
        results[label] = StrategyResult(
            label=label, weights=weights[label], returns=realized[label],
            utilities=utils, n_excluded=int((~ok).sum()))

    fee, fee_p, msr, msr_p = _pairwise_tables(
        results, upsilon, n_boot, np.random.default_rng(random_state))

    if "FDDM" in strategies:
        gof = _gof_table(pit_oos, n_assets)
    else:
        gof = pd.DataFrame()

    oos_dates = dates[F:F + S] if dates else []
    return BacktestReport(
        schedule=schedule, upsilon=upsilon, seed=random_state,
        strategies=results, fee=fee, fee_pvalue=fee_p, msr=msr,
        msr_pvalue=msr_p, gof=gof, n_refits=n_refits, dates=oos_dates,
        first_fit=first_fit)


def _pairwise_tables(results, upsilon, n_boot, rng):
    labels = list(results)
    k = len(labels)
    fee = np.zeros((k, k))
    fee_p = np.ones((k, k))
    msr = np.zeros((k, k))
    msr_p = np.ones((k, k))
    frac = {lab: results[lab].returns / 100.0 for lab in labels}
    for ia, a in enumerate(labels):
        for ib, b in enumerate(labels):
            if ia == ib:
                continue
            seed_fee = int(rng.integers(2 ** 63))
            seed_msr = int(rng.integers(2 ** 63))
            fee[ia, ib] = management_fee(frac[a], frac[b], upsilon)
            msr[ia, ib] = modified_sharpe(frac[a], frac[b])
            if n_boot > 0:
                fee_p[ia, ib] = block_bootstrap_pvalue(
                    lambda x, y: management_fee(x, y, upsilon),
                    frac[a], frac[b], n_boot=n_boot, random_state=seed_fee)
                msr_p[ia, ib] = block_bootstrap_pvalue(
                    modified_sharpe, frac[a], frac[b], n_boot=n_boot,
                    random_state=seed_msr)
    def to_df(M):
        return pd.DataFrame(M, index=labels, columns=labels)

    return to_df(fee), to_df(fee_p), to_df(msr), to_df(msr_p)


def _gof_table(pit_oos, n_assets):
    def stat(fn, *args, **kw):
        # too-short samples cannot carry the test; report a gap, not a crash
        try:
            return fn(*args, **kw)
        except ValueError:
            return np.nan

    rows = {}
    for j in range(n_assets):
        u = pit_oos[:, j]
        rows[f"asset_{j}"] = {
            **{f"dgt_ar_{k}": stat(dgt_ar_test, u, k=k)
               for k in (1, 2, 3, 4)},
            "dgt_h": stat(dgt_h_test, u),
        }
    return pd.DataFrame(rows).T
