"""Markov-switching Student-t copula with dynamic correlations.

Dependence between assets is modelled by a Student-t copula whose
correlation matrix follows a covariance-targeting recursion driven by a
rolling covariance of the pseudo-observations and, optionally, exogenous
covariates.  A hidden Markov chain switches between regimes, each with
its own recursion coefficients and degrees of freedom.  Estimation is by
EM with a penalized M-step; positive definiteness along the correlation
path is encouraged rather than imposed.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special, stats
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .validation import as_panel, check_prob_vector, check_unit_interval

# PML penalty per unit of negative eigenvalue mass
PENALTY_WEIGHT = 1e4
# default rolling window of the forcing covariance
FORCING_WINDOW = 20
# degrees of freedom live in (2, inf); the soft barrier starts here
NU_C_BARRIER = 2.05
# pseudo-observations are clamped away from {0, 1} before transforming
U_CLIP = 1e-12

__all__ = [
    "RegimeParams", "TransitionSpec", "CopulaState", "MSCopulaModel",
    "FilterResult", "forcing_variable", "forcing_path", "dcc_step",
    "leverage_dcc_step", "to_correlation", "t_copula_logdensity",
    "hamilton_filter", "smooth", "em_fit", "select_model",
    "expected_duration", "aic", "bic", "n_copula_params",
    "simulate_copula", "MSCopula",
]


# ---------------------------------------------------------------------------
# domain types

def _as_loadings(v, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a scalar or 1-d vector")
    return v


@dataclass(frozen=True)
class RegimeParams:
    """Correlation-recursion coefficients for one regime.

    ``a`` and ``b`` hold one loading per asset, or a single shared
    loading under the restricted specification.  ``xi`` weights the
    exogenous covariates and may be empty.
    """

    a: np.ndarray
    b: np.ndarray
    nu_c: float
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_lev: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "a", _as_loadings(self.a, "a"))
        object.__setattr__(self, "b", _as_loadings(self.b, "b"))
        object.__setattr__(self, "xi",
                           np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "nu_c", float(self.nu_c))
        if self.gamma_lev is not None:
            object.__setattr__(self, "gamma_lev",
                               _as_loadings(self.gamma_lev, "gamma_lev"))
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have the same shape")
        if np.any(self.a < 0.0) or np.any(self.b < 0.0):
            raise ValueError("loadings must be non-negative")
        if np.any(self.a + self.b >= 1.0):
            raise ValueError("a + b < 1 is required for every asset")
        if not self.nu_c > 2.0:
            raise ValueError("nu_c must exceed 2")

    def expand(self, n_assets):
        """Per-asset (a, b, gamma_lev) vectors of length ``n_assets``."""
        def grow(v):
            if v.size == n_assets:
                return v.astype(float)
            if v.size == 1:
                return np.full(n_assets, float(v[0]))
            raise ValueError("loading length matches neither 1 nor n_assets")
        g = (np.zeros(n_assets) if self.gamma_lev is None
             else grow(self.gamma_lev))
        return grow(self.a), grow(self.b), g

    def to_dict(self):
        return {
            "a": self.a.tolist(), "b": self.b.tolist(),
            "nu_c": self.nu_c, "xi": self.xi.tolist(),
            "gamma_lev": (None if self.gamma_lev is None
                          else self.gamma_lev.tolist()),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(a=np.asarray(d["a"], dtype=float),
                   b=np.asarray(d["b"], dtype=float),
                   nu_c=float(d["nu_c"]),
                   xi=np.asarray(d["xi"], dtype=float),
                   gamma_lev=(None if d.get("gamma_lev") is None
                              else np.asarray(d["gamma_lev"], dtype=float)))


@dataclass(frozen=True)
class TransitionSpec:
    """Markov chain over regimes: transition matrix and initial law."""

    Q: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if delta.shape != (Q.shape[0],):
            raise ValueError("delta length must match Q")
        if np.any(Q < 0.0):
            raise ValueError("Q entries must be non-negative")
        if np.max(np.abs(Q.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("rows of Q must sum to 1")
        check_prob_vector(delta, "delta")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "delta", delta)

    @property
    def n_regimes(self):
        return self.Q.shape[0]

    def to_dict(self):
        return {"Q": self.Q.tolist(), "delta": self.delta.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Q=np.asarray(d["Q"], dtype=float),
                   delta=np.asarray(d["delta"], dtype=float))


@dataclass
class CopulaState:
    """Everything the one-step-ahead distribution depends on."""

    C: np.ndarray            # (L, N, N) next-step recursion matrices
    filtered: np.ndarray     # (L,) P(S_t = s | data)
    predicted: np.ndarray    # (L,) P(S_{t+1} = s | data)
    cbar: np.ndarray
    xbar: np.ndarray
    m: int


@dataclass
class MSCopulaModel:
    """Fitted Markov-switching copula."""

    regimes: list
    trans: TransitionSpec
    spec: str
    cbar: np.ndarray
    xbar: np.ndarray
    m: int = FORCING_WINDOW
    leverage: bool = False
    loglik: float = np.nan
    penalty: float = 0.0
    aic: float = np.nan
    bic: float = np.nan
    n_obs: int = 0
    em_iterations: int = 0
    em_loglik_path: list = field(default_factory=list)

    def __post_init__(self):
        if self.spec not in ("simple", "generalised"):
            raise ValueError(f"unknown spec {self.spec!r}")
        if len(self.regimes) != self.trans.n_regimes:
            raise ValueError("regime count must match the transition matrix")
        if len(self.regimes) < 1:
            raise ValueError("at least one regime is required")
        self.cbar = np.asarray(self.cbar, dtype=float)
        self.xbar = np.asarray(self.xbar, dtype=float)

    @property
    def n_regimes(self):
        return len(self.regimes)

    @property
    def n_assets(self):
        return self.cbar.shape[0]

    @property
    def n_covariates(self):
        return int(self.xbar.shape[0])

    @property
    def n_params(self):
        return n_copula_params(self.spec, self.n_regimes, self.n_assets,
                               self.n_covariates, self.leverage)

    def to_dict(self):
        return {
            "regimes": [r.to_dict() for r in self.regimes],
            "trans": self.trans.to_dict(),
            "spec": self.spec,
            "cbar": self.cbar.tolist(),
            "xbar": self.xbar.tolist(),
            "m": self.m,
            "leverage": self.leverage,
            "loglik": self.loglik,
            "penalty": self.penalty,
            "aic": self.aic,
            "bic": self.bic,
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            regimes=[RegimeParams.from_dict(r) for r in d["regimes"]],
            trans=TransitionSpec.from_dict(d["trans"]),
            spec=d["spec"],
            cbar=np.asarray(d["cbar"], dtype=float),
            xbar=np.asarray(d["xbar"], dtype=float),
            m=int(d["m"]),
            leverage=bool(d.get("leverage", False)),
            loglik=float(d.get("loglik", np.nan)),
            penalty=float(d.get("penalty", 0.0)),
            aic=float(d.get("aic", np.nan)),
            bic=float(d.get("bic", np.nan)),
            n_obs=int(d.get("n_obs", 0)),
        )


def n_copula_params(spec, n_regimes, n_assets, n_covariates=0,
                    leverage=False):
    """Free-parameter count: per-regime loadings plus the off-diagonal
    transition probabilities."""
    n_load = 1 if spec == "simple" else n_assets
    per_regime = 2 * n_load + 1 + n_covariates + (n_load if leverage else 0)
    return n_regimes * per_regime + n_regimes * (n_regimes - 1)


def aic(loglik, n_params):
    return -2.0 * loglik + 2.0 * n_params


def bic(loglik, n_params, n_obs):
    return -2.0 * loglik + n_params * math.log(n_obs)


def expected_duration(q_stay):
    """Mean sojourn length of a regime with self-transition ``q_stay``."""
    q = float(q_stay)
    if not 0.0 < q < 1.0:
        raise ValueError("q_stay must lie strictly inside (0, 1)")
    return 1.0 / (1.0 - q)


# ---------------------------------------------------------------------------
# correlation recursion

def forcing_variable(u_window, m=None):
    """Covariance of the trailing pseudo-observation window.

    Uses the 1/m normalisation, so all-identical rows give exactly the
    zero matrix.
    """
    u_window = as_panel(u_window, "u_window", min_rows=1)
    if m is not None and u_window.shape[0] != m:
        raise ValueError(f"window has {u_window.shape[0]} rows, expected {m}")
    mean = u_window.mean(axis=0)
    return u_window.T @ u_window / u_window.shape[0] - np.outer(mean, mean)


def forcing_path(U, m, cbar):
    """Trailing-window covariances for every t; early rows fall back to
    the long-run matrix until a full window exists."""
    U = as_panel(U, "U", min_rows=1)
    T, N = U.shape
    out = np.empty((T, N, N))
    head = min(m - 1, T)
    out[:head] = cbar
    if T >= m:
        W = sliding_window_view(U, m, axis=0)          # (T-m+1, N, m)
        mean = W.mean(axis=2)
        out[m - 1:] = (np.einsum("tim,tjm->tij", W, W) / m
                       - mean[:, :, None] * mean[:, None, :])
    return out


def to_correlation(C):
    """Rescale a covariance-like matrix to unit diagonal."""
    C = np.asarray(C, dtype=float)
    d = np.sqrt(np.diag(C))
    if np.any(d <= 0.0):
        raise ValueError("matrix has a non-positive diagonal entry")
    R = C / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


def dcc_step(C, Xi, x_t, regime, cbar, xbar):
    """One update of the covariance-targeting recursion.

    The intercept is chosen so that ``C = cbar`` is a fixed point when
    the forcing matrix equals ``cbar`` and the covariates sit at their
    means.  Covariates shift every entry of the matrix by the same
    scalar.
    """
    C = np.asarray(C, dtype=float)
    N = C.shape[0]
    a, b, _ = regime.expand(N)
    sa, sb = np.sqrt(a), np.sqrt(b)
    A = np.outer(sa, sa)
    B = np.outer(sb, sb)
    shift = 0.0
    if regime.xi.size:
        x_t = np.asarray(x_t, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        shift = float(regime.xi @ (x_t - xbar))
    out = cbar - A * cbar - B * cbar + A * Xi + B * C + shift
    return 0.5 * (out + out.T)


def leverage_dcc_step(C, Xi, x_t, regime, cbar, xbar, eta, nbar):
    """Recursion step with an extra loading on joint negative moves.

    ``eta`` is the vector of negative parts of the standardized-t
    transforms; ``nbar`` is the sample mean of ``eta eta'`` and keeps
    the fixed point at ``cbar``.
    """
    out = dcc_step(C, Xi, x_t, regime, cbar, xbar)
    N = out.shape[0]
    _, _, g = regime.expand(N)
    G = np.outer(g, g)
    eta = np.asarray(eta, dtype=float)
    out = out + G * (np.outer(eta, eta) - nbar)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# density kernels

@njit(cache=True)
def _chol(A, L):
    """In-place lower Cholesky; returns False when A is not PD."""
    n = A.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 1e-300:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _copula_logdensity_from_chol(z, L, nu, work):
    n = z.shape[0]
    logdet = 0.0
    q = 0.0
    for i in range(n):
        s = z[i]
        for k in range(i):
            s -= L[i, k] * work[k]
        work[i] = s / L[i, i]
        q += work[i] * work[i]
        logdet += 2.0 * np.log(L[i, i])
    tail = 0.0
    for i in range(n):
        tail += np.log1p(z[i] * z[i] / nu)
    return (math.lgamma(0.5 * (nu + n)) + (n - 1.0) * math.lgamma(0.5 * nu)
            - n * math.lgamma(0.5 * (nu + 1.0)) - 0.5 * logdet
            - 0.5 * (nu + n) * np.log1p(q / nu) + 0.5 * (nu + 1.0) * tail)


@njit(cache=True)
def _regime_path_kernel(Z, Xi, shift, eta, nbar, cbar, avec, bvec, gvec,
                        nu, lam, out_ll, out_C):
    """Correlation path and per-observation copula log density.

    The recursion propagates the raw matrices; a failed factorization
    triggers an eigenvalue repair for the density evaluation only and
    adds the negative mass to the returned penalty.
    """
    T, N = Z.shape
    C = cbar.copy()
    R = np.empty((N, N))
    L = np.empty((N, N))
    nxt = np.empty((N, N))
    work = np.empty(N)
    diag = np.empty(N)
    sa = np.sqrt(avec)
    sb = np.sqrt(bvec)
    intercept = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            intercept[i, j] = cbar[i, j] * (1.0 - sa[i] * sa[j]
                                            - sb[i] * sb[j])
    use_lev = False
    for i in range(N):
        if gvec[i] != 0.0:
            use_lev = True
    pen = 0.0
    n_notpd = 0
    for t in range(T):
        for i in range(N):
            for j in range(N):
                out_C[t, i, j] = C[i, j]
        ok = True
        for i in range(N):
            if C[i, i] <= 1e-12:
                ok = False
        if ok:
            for i in range(N):
                for j in range(N):
                    R[i, j] = C[i, j] / np.sqrt(C[i, i] * C[j, j])
            ok = _chol(R, L)
        if not ok:
            n_notpd += 1
            w, V = np.linalg.eigh(C)
            neg = 0.0
            for i in range(N):
                if w[i] < 0.0:
                    neg -= w[i]
                if w[i] < 1e-8:
                    w[i] = 1e-8
            pen += lam * neg
            for i in range(N):
                for j in range(N):
                    s = 0.0
                    for k in range(N):
                        s += V[i, k] * w[k] * V[j, k]
                    R[i, j] = s
            for i in range(N):
                diag[i] = np.sqrt(R[i, i])
            for i in range(N):
                for j in range(N):
                    R[i, j] = R[i, j] / (diag[i] * diag[j])
            _chol(R, L)
        out_ll[t] = _copula_logdensity_from_chol(Z[t], L, nu, work)
        # advance the recursion from the unrepaired matrix
        for i in range(N):
            for j in range(N):
                v = (intercept[i, j] + sa[i] * sa[j] * Xi[t, i, j]
                     + sb[i] * sb[j] * C[i, j] + shift[t])
                if use_lev:
                    v += gvec[i] * gvec[j] * (eta[t, i] * eta[t, j]
                                              - nbar[i, j])
                nxt[i, j] = v
        for i in range(N):
            for j in range(N):
                C[i, j] = 0.5 * (nxt[i, j] + nxt[j, i])
    for i in range(N):
        for j in range(N):
            out_C[T, i, j] = C[i, j]
    return pen, n_notpd


class _TransformCache:
    """Quantile transforms of a fixed panel, memoized per degrees of
    freedom.  M-step line searches revisit the same nu many times."""

    def __init__(self, U, max_entries=64):
        self._U = U
        self._store = {}
        self._max = max_entries

    def z(self, nu):
        key = float(nu)
        if key not in self._store:
            if len(self._store) >= self._max:
                self._store.pop(next(iter(self._store)))
            self._store[key] = np.ascontiguousarray(
                special.stdtrit(key, self._U))
        return self._store[key]

    def eta(self, nu):
        key = ("eta", float(nu))
        if key not in self._store:
            z = self.z(nu) * np.sqrt((nu - 2.0) / nu)
            self._store[key] = np.ascontiguousarray(np.minimum(z, 0.0))
        return self._store[key]


def t_copula_logdensity(u, R, nu_c):
    """Log density of the Student-t copula at one or many points.

    ``u`` may be a single N-vector or a T×N panel; the correlation
    matrix is fixed across rows.
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    check_unit_interval(U, "u")
    R = np.asarray(R, dtype=float)
    N = R.shape[0]
    if U.shape[1] != N:
        raise ValueError("u and R disagree on the number of assets")
    nu = float(nu_c)
    if not nu > 2.0:
        raise ValueError("nu_c must exceed 2")
    z = special.stdtrit(nu, np.clip(U, U_CLIP, 1.0 - U_CLIP))
    Lc = np.linalg.cholesky(R)
    y = solve_triangular(Lc, z.T, lower=True)
    q = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
    tail = np.sum(np.log1p(z * z / nu), axis=1)
    out = (math.lgamma(0.5 * (nu + N)) + (N - 1.0) * math.lgamma(0.5 * nu)
           - N * math.lgamma(0.5 * (nu + 1.0)) - 0.5 * logdet
           - 0.5 * (nu + N) * np.log1p(q / nu) + 0.5 * (nu + 1.0) * tail)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# filtering

@dataclass
class FilterResult:
    """Output of one forward pass."""

    logc: np.ndarray        # (T, L) per-regime log densities
    filtered: np.ndarray    # (T, L)
    predicted: np.ndarray   # (T+1, L); row 0 is the initial law
    C: np.ndarray           # (L, T+1, N, N) recursion paths
    loglik: float
    penalty: float
    n_notpd: int

    def final_state(self, model):
        return CopulaState(
            C=self.C[:, -1].copy(),
            filtered=self.filtered[-1].copy(),
            predicted=self.predicted[-1].copy(),
            cbar=model.cbar, xbar=model.xbar, m=model.m)


def _prepare_covariates(X, T, xbar):
    if X is None:
        if xbar.size:
            raise ValueError("model uses covariates but X was not given")
        return np.zeros((T, 0))
    if not xbar.size:
        raise ValueError("model has no covariates but X was provided")
    X = as_panel(X, "X", min_rows=T, n_cols=xbar.shape[0])
    if X.shape[0] != T:
        raise ValueError("X and U must have the same number of rows")
    return X


def _regime_logliks(U, X, model, cache=None):
    """Per-regime log densities, paths and penalties for a panel."""
    T, N = U.shape
    L = model.n_regimes
    cache = cache or _TransformCache(U)
    Xi = forcing_path(U, model.m, model.cbar)
    logc = np.empty((T, L))
    paths = np.empty((L, T + 1, N, N))
    pens = np.zeros(L)
    notpd = 0
    for s, r in enumerate(model.regimes):
        a, b, g = r.expand(N)
        shift = (X - model.xbar) @ r.xi if r.xi.size else np.zeros(T)
        if model.leverage and r.gamma_lev is not None:
            eta = cache.eta(r.nu_c)
            nbar = eta.T @ eta / T
        else:
            eta = np.zeros((T, N))
            nbar = np.zeros((N, N))
            g = np.zeros(N)
        pen, bad = _regime_path_kernel(
            cache.z(r.nu_c), Xi, np.ascontiguousarray(shift), eta, nbar,
            model.cbar, a, b, g, r.nu_c, PENALTY_WEIGHT, logc[:, s],
            paths[s])
        pens[s] = pen
        notpd += bad
    return logc, paths, pens, notpd


def _forward(logc, Q, delta):
    T, L = logc.shape
    filtered = np.empty((T, L))
    predicted = np.empty((T + 1, L))
    predicted[0] = delta
    ll = 0.0
    for t in range(T):
        mx = logc[t].max()
        w = predicted[t] * np.exp(logc[t] - mx)
        s = w.sum()
        if not np.isfinite(s) or s <= 0.0:
            raise FloatingPointError(
                f"mixture likelihood vanished at observation {t}")
        ll += np.log(s) + mx
        filtered[t] = w / s
        predicted[t + 1] = filtered[t] @ Q
    return filtered, predicted, ll


def hamilton_filter(U, X, model):
    """Forward pass: regime probabilities and the mixture log likelihood.

    Returns a :class:`FilterResult`; ``predicted[t]`` is the regime law
    used to weight the densities of observation ``t``.
    """
    U = as_panel(U, "U", min_rows=1, n_cols=model.n_assets)
    check_unit_interval(U, "U", open_interval=False)
    U = np.clip(U, U_CLIP, 1.0 - U_CLIP)
    X = _prepare_covariates(X, U.shape[0], model.xbar)
    logc, paths, pens, notpd = _regime_logliks(U, X, model)
    filtered, predicted, ll = _forward(logc, model.trans.Q,
                                       model.trans.delta)
    return FilterResult(logc=logc, filtered=filtered, predicted=predicted,
                        C=paths, loglik=float(ll),
                        penalty=float(pens.sum()), n_notpd=int(notpd))


def smooth(result, model):
    """Smoothed regime probabilities from a forward pass.

    Returns ``(smoothed, trans_counts)`` where ``trans_counts[i, j]``
    sums the posterior probability of an i-to-j switch over the sample.
    """
    logc, filtered, predicted = result.logc, result.filtered, result.predicted
    Q = model.trans.Q
    T, L = logc.shape
    sm = np.empty((T, L))
    sm[-1] = filtered[-1]
    counts = np.zeros((L, L))
    for t in range(T - 2, -1, -1):
        ratio = sm[t + 1] / np.maximum(predicted[t + 1], 1e-300)
        counts += filtered[t][:, None] * Q * ratio[None, :]
        sm[t] = filtered[t] * (Q @ ratio)
        tot = sm[t].sum()
        if tot > 0.0:
            sm[t] /= tot
    return sm, counts


# ---------------------------------------------------------------------------
# estimation

def _pack_regime(r, spec, n_covariates, leverage):
    a = r.a if spec == "generalised" else r.a[:1]
    b = r.b if spec == "generalised" else r.b[:1]
    s = np.clip(a + b, 1e-8, 1.0 - 1e-8)
    frac = np.clip(a / np.maximum(s, 1e-12), 1e-8, 1.0 - 1e-8)
    x = [special.logit(frac), special.logit(s),
         [math.log(r.nu_c - 2.0)]]
    if n_covariates:
        x.append(r.xi)
    if leverage:
        g = r.gamma_lev if r.gamma_lev is not None else np.zeros_like(a)
        x.append(g if spec == "generalised" else g[:1])
    return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float))
                           for v in x])


def _unpack_regime(x, spec, n_assets, n_covariates, leverage):
    k = 1 if spec == "simple" else n_assets
    frac = special.expit(x[:k])
    s = special.expit(x[k:2 * k])
    a = frac * s
    b = (1.0 - frac) * s
    nu = 2.0 + math.exp(x[2 * k])
    pos = 2 * k + 1
    xi = x[pos:pos + n_covariates]
    pos += n_covariates
    g = x[pos:pos + k] if leverage else None
    return RegimeParams(a=a, b=b, nu_c=nu, xi=xi, gamma_lev=g)


def _regime_bounds(spec, n_assets, n_covariates, leverage):
    k = 1 if spec == "simple" else n_assets
    bounds = [(-12.0, 12.0)] * (2 * k)
    bounds.append((math.log(0.03), math.log(500.0)))
    bounds += [(-1e3, 1e3)] * n_covariates
    if leverage:
        bounds += [(-5.0, 5.0)] * k
    return bounds


def _weighted_regime_negll(x, weights, U, X, Xi, cbar, xbar, cache, spec,
                           leverage):
    T, N = U.shape
    try:
        r = _unpack_regime(x, spec, N, X.shape[1], leverage)
    except ValueError:
        return 1e10
    a, b, g = r.expand(N)
    shift = (X - xbar) @ r.xi if r.xi.size else np.zeros(T)
    if leverage:
        eta = cache.eta(r.nu_c)
        nbar = eta.T @ eta / T
    else:
        eta = np.zeros((T, N))
        nbar = np.zeros((N, N))
        g = np.zeros(N)
    out_ll = np.empty(T)
    out_C = np.empty((T + 1, N, N))
    pen, _ = _regime_path_kernel(
        cache.z(r.nu_c), Xi, np.ascontiguousarray(shift), eta, nbar,
        cbar, a, b, g, r.nu_c, PENALTY_WEIGHT, out_ll, out_C)
    # soft barrier keeps the tail index away from its boundary
    barrier = 1e3 * min(0.0, r.nu_c - NU_C_BARRIER) ** 2
    total = weights @ out_ll - pen - barrier
    if not np.isfinite(total):
        return 1e10
    return -total / max(weights.sum(), 1.0)


def _mstep_regime(r, weights, U, X, Xi, cbar, xbar, cache, spec, leverage,
                  max_iter):
    x0 = _pack_regime(r, spec, X.shape[1], leverage)
    bounds = _regime_bounds(spec, U.shape[1], X.shape[1], leverage)
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
    res = minimize(
        _weighted_regime_negll, x0,
        args=(weights, U, X, Xi, cbar, xbar, cache, spec, leverage),
        method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-10, "eps": 1e-6})
    x = res.x if res.fun <= _weighted_regime_negll(
        x0, weights, U, X, Xi, cbar, xbar, cache, spec, leverage) else x0
    return _unpack_regime(x, spec, U.shape[1], X.shape[1], leverage)


def _dependence_labels(U, n_groups, width=25):
    """Group observations by the dependence level of their window.

    Mean pairwise Kendall tau over non-overlapping windows, split into
    ``n_groups`` quantile bins; each observation inherits its window's
    bin.  A crude regime guess that seeds the chain initialisation.
    """
    T, N = U.shape
    n_win = max(T // width, 1)
    feats = np.empty(T)
    for w in range(n_win):
        lo = w * width
        hi = T if w == n_win - 1 else lo + width
        taus = [stats.kendalltau(U[lo:hi, i], U[lo:hi, j]).statistic
                for i in range(N) for j in range(i + 1, N)]
        feats[lo:hi] = np.nan_to_num(np.mean(taus), nan=0.0)
    if n_groups == 1:
        return np.zeros(T, dtype=int)
    edges = np.quantile(np.unique(feats),
                        np.linspace(0, 1, n_groups + 1)[1:-1])
    return np.digitize(feats, edges)


def _labels_to_chain(labels, n_regimes):
    """Transition matrix and initial law implied by a label path,
    shrunk towards a persistent diagonal."""
    counts = np.full((n_regimes, n_regimes), 1e-3)
    for a, b in zip(labels[:-1], labels[1:]):
        counts[a, b] += 1.0
    Q_emp = counts / counts.sum(axis=1, keepdims=True)
    Q_prior = np.full((n_regimes, n_regimes), 0.05 / max(n_regimes - 1, 1))
    np.fill_diagonal(Q_prior, 0.95)
    Q = 0.5 * Q_emp + 0.5 * Q_prior
    Q /= Q.sum(axis=1, keepdims=True)
    delta = np.full(n_regimes, 0.1 / max(n_regimes - 1, 1))
    delta[labels[0]] = 0.9
    delta /= delta.sum()
    return Q, delta


def _initial_models(U, X, n_regimes, spec, m, leverage, rng, n_restarts):
    """Starting points: one informed by clustering the dependence level,
    the rest randomized."""
    T, N = U.shape
    p = 0 if X is None else X.shape[1]
    cbar = np.cov(U, rowvar=False, bias=True)
    xbar = np.zeros(0) if X is None else X.mean(axis=0)
    nu_ladder = np.array([5.0, 15.0, 40.0])
    starts = []
    for rep in range(n_restarts):
        regimes = []
        for s in range(n_regimes):
            if rep == 0:
                nu = nu_ladder[s % 3]
                a0, b0 = 0.02, 0.88
            else:
                nu = float(np.exp(rng.normal(np.log(nu_ladder[s % 3]), 0.5)))
                nu = min(max(nu, 2.5), 300.0)
                a0 = float(rng.uniform(0.01, 0.05))
                b0 = float(rng.uniform(0.70, 0.92))
            k = 1 if spec == "simple" else N
            regimes.append(RegimeParams(
                a=np.full(k, a0), b=np.full(k, b0), nu_c=nu,
                xi=np.zeros(p),
                gamma_lev=np.zeros(k) if leverage else None))
        if n_regimes == 1:
            Q = np.ones((1, 1))
            delta = np.ones(1)
        elif rep == 0:
            Q, delta = _labels_to_chain(_dependence_labels(U, n_regimes),
                                        n_regimes)
        else:
            Q = np.full((n_regimes, n_regimes), 0.05 / (n_regimes - 1))
            np.fill_diagonal(Q, 0.95)
            delta = rng.dirichlet(np.ones(n_regimes))
        starts.append(MSCopulaModel(
            regimes=regimes, trans=TransitionSpec(Q=Q, delta=delta),
            spec=spec, cbar=cbar, xbar=xbar, m=m, leverage=leverage))
    return starts


def _em_once(U, X, start, max_iter, tol, mstep_iter, rng):
    """Run EM from one starting model; returns the improved model."""
    T = U.shape[0]
    L = start.n_regimes
    model = start
    cache = _TransformCache(U)
    Xp = _prepare_covariates(X, T, model.xbar)
    Xi = forcing_path(U, model.m, model.cbar)
    path = []
    restarts_left = 2
    it = 0
    while it < max_iter:
        it += 1
        logc, _, pens, _ = _regime_logliks(U, Xp, model, cache)
        filtered, predicted, ll = _forward(logc, model.trans.Q,
                                           model.trans.delta)
        pll = ll - pens.sum()
        path.append(pll)
        if len(path) > 1 and abs(path[-1] - path[-2]) < tol:
            break
        res = FilterResult(logc=logc, filtered=filtered,
                           predicted=predicted, C=np.empty((L, 0, 0, 0)),
                           loglik=ll, penalty=pens.sum(), n_notpd=0)
        gamma, counts = smooth(res, model)
        occupancy = gamma.sum(axis=0)
        if occupancy.min() < 1e-3 * T and restarts_left > 0:
            restarts_left -= 1
            warnings.warn("a regime starved during EM; perturbing the "
                          "transition matrix and continuing")
            Q = np.full((L, L), 0.2 / max(L - 1, 1))
            np.fill_diagonal(Q, 0.8)
            Q = Q + rng.uniform(0.0, 0.05, size=(L, L))
            Q /= Q.sum(axis=1, keepdims=True)
            model = MSCopulaModel(
                regimes=model.regimes,
                trans=TransitionSpec(Q=Q, delta=np.full(L, 1.0 / L)),
                spec=model.spec, cbar=model.cbar, xbar=model.xbar,
                m=model.m, leverage=model.leverage)
            continue
        if L > 1:
            Q = counts + 1e-10
            Q /= Q.sum(axis=1, keepdims=True)
            delta = np.clip(gamma[0], 1e-12, None)
            delta /= delta.sum()
        else:
            Q = np.ones((1, 1))
            delta = np.ones(1)
        regimes = [
            _mstep_regime(model.regimes[s], gamma[:, s], U, Xp, Xi,
                          model.cbar, model.xbar, cache, model.spec,
                          model.leverage, mstep_iter)
            for s in range(L)
        ]
        model = MSCopulaModel(
            regimes=regimes, trans=TransitionSpec(Q=Q, delta=delta),
            spec=model.spec, cbar=model.cbar, xbar=model.xbar,
            m=model.m, leverage=model.leverage)
    logc, _, pens, notpd = _regime_logliks(U, Xp, model, cache)
    _, _, ll = _forward(logc, model.trans.Q, model.trans.delta)
    model.loglik = float(ll)
    model.penalty = float(pens.sum())
    model.n_obs = T
    model.em_iterations = it
    model.em_loglik_path = path
    model.aic = aic(model.loglik, model.n_params)
    model.bic = bic(model.loglik, model.n_params, T)
    return model


def _order_regimes(model):
    """Relabel so degrees of freedom increase with the regime index."""
    order = np.argsort([r.nu_c for r in model.regimes], kind="stable")
    if np.array_equal(order, np.arange(model.n_regimes)):
        return model
    Q = model.trans.Q[np.ix_(order, order)]
    delta = model.trans.delta[order]
    model.regimes = [model.regimes[i] for i in order]
    model.trans = TransitionSpec(Q=Q, delta=delta)
    return model


def em_fit(U, X=None, n_regimes=2, spec="simple", m=FORCING_WINDOW,
           leverage=False, max_iter=500, tol=1e-6, mstep_iter=25,
           n_restarts=3, random_state=0, n_jobs=1, warm_start=None):
    """Fit the switching copula by penalized EM.

    Parameters
    ----------
    U : array-like, shape (T, N)
        Pseudo-observations in (0, 1).
    X : array-like, shape (T, p), optional
        Exogenous covariates aligned with ``U``; omit for the
        covariate-free model.
    n_regimes : int
        Number of hidden states.
    spec : {"simple", "generalised"}
        Shared per-regime loadings versus one loading pair per asset.
    m : int
        Rolling window of the forcing covariance.
    leverage : bool
        Adds a loading on joint negative moves.
    max_iter, tol : EM stopping rule on the penalized log likelihood.
    mstep_iter : int
        Optimizer iterations per regime per M-step; the M-step improves
        rather than maximizes, which preserves the ascent property.
    n_restarts : int
        Independent starting points; the best final fit is kept.
    random_state : int
    n_jobs : int
        Restarts run in parallel when > 1.
    warm_start : MSCopulaModel, optional
        Previous fit whose regimes and chain seed the first start; the
        targeting moments are recomputed from the current panel.

    Returns
    -------
    MSCopulaModel
    """
    U = as_panel(U, "U", min_rows=m + 51)
    check_unit_interval(U, "U", open_interval=False)
    U = np.clip(U, U_CLIP, 1.0 - U_CLIP)
    if spec not in ("simple", "generalised"):
        raise ValueError(f"unknown spec {spec!r}")
    if n_regimes < 1:
        raise ValueError("n_regimes must be at least 1")
    rng = np.random.default_rng(random_state)
    n_restarts = max(1, int(n_restarts))
    starts = _initial_models(U, X, n_regimes, spec, m, leverage, rng,
                             n_restarts)
    if warm_start is not None:
        if (warm_start.n_regimes != n_regimes or warm_start.spec != spec
                or warm_start.leverage != leverage
                or warm_start.n_covariates != starts[0].xbar.shape[0]):
            raise ValueError("warm_start does not match the requested model")
        rebased = MSCopulaModel(
            regimes=warm_start.regimes, trans=warm_start.trans, spec=spec,
            cbar=starts[0].cbar, xbar=starts[0].xbar, m=m, leverage=leverage)
        starts = [rebased] + starts[:n_restarts - 1]
    seeds = [np.random.default_rng(rng.integers(2**63))
             for _ in range(n_restarts)]

    def run(i):
        return _em_once(U, X, starts[i], max_iter, tol, mstep_iter,
                        seeds[i])

    if n_jobs > 1 and n_restarts > 1:
        with ThreadPoolExecutor(max_workers=min(n_jobs, n_restarts)) as ex:
            fits = list(ex.map(run, range(n_restarts)))
    else:
        fits = [run(i) for i in range(n_restarts)]
    best = min(fits, key=lambda f: f.bic)
    return _order_regimes(best)


def select_model(U, X=None, n_regimes_grid=(1, 2, 3),
                 specs=("simple", "generalised"), try_covariates=True,
                 m=FORCING_WINDOW, random_state=0, n_jobs=1, **em_kwargs):
    """Fit a grid of specifications and rank them by BIC.

    Returns ``(table, models)`` where ``table`` is a list of row dicts
    sorted ascending by BIC and ``models`` maps
    ``(n_regimes, spec, covariates)`` to the fitted model.
    """
    cells = []
    for L in n_regimes_grid:
        for spec in specs:
            opts = [False, True] if (X is not None and try_covariates) \
                else [False]
            for with_x in opts:
                cells.append((int(L), spec, with_x))

    def run(cell):
        L, spec, with_x = cell
        return cell, em_fit(U, X if with_x else None, n_regimes=L,
                            spec=spec, m=m, random_state=random_state,
                            **em_kwargs)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]
    models = {cell: fit for cell, fit in results}
    table = [
        {"n_regimes": cell[0], "spec": cell[1], "covariates": cell[2],
         "n_params": fit.n_params, "loglik": fit.loglik,
         "aic": fit.aic, "bic": fit.bic}
        for cell, fit in results
    ]
    table.sort(key=lambda row: row["bic"])
    return table, models


# ---------------------------------------------------------------------------
# simulation

def simulate_copula(model, n_obs, X=None, random_state=None):
    """Draw pseudo-observations from the switching copula.

    The hidden chain is sampled from the transition matrix; every
    regime's recursion advances on the simulated data regardless of the
    active state, mirroring the filter.

    Returns
    -------
    U : ndarray, shape (n_obs, N)
    states : ndarray of int, shape (n_obs,)
    """
    rng = np.random.default_rng(random_state)
    N = model.n_assets
    L = model.n_regimes
    X = _prepare_covariates(X, n_obs, model.xbar)
    states = np.empty(n_obs, dtype=np.int64)
    U = np.empty((n_obs, N))
    C = np.repeat(model.cbar[None], L, axis=0)
    expanded = [r.expand(N) for r in model.regimes]
    state = int(rng.choice(L, p=model.trans.delta))
    for t in range(n_obs):
        states[t] = state
        r = model.regimes[state]
        R = to_correlation(0.5 * (C[state] + C[state].T))
        w, V = np.linalg.eigh(R)
        R = to_correlation(V @ np.diag(np.maximum(w, 1e-8)) @ V.T)
        chol = np.linalg.cholesky(R)
        g = rng.standard_normal(N)
        mix = r.nu_c / rng.chisquare(r.nu_c)
        z = chol @ g * np.sqrt(mix)
        U[t] = np.clip(special.stdtr(r.nu_c, z), U_CLIP, 1.0 - U_CLIP)
        lo = max(0, t + 1 - model.m)
        window = U[lo:t + 1]
        Xi = (forcing_variable(window) if window.shape[0] == model.m
              else model.cbar)
        for s, reg in enumerate(model.regimes):
            C[s] = dcc_step(C[s], Xi, X[t] if X.shape[1] else np.zeros(0),
                            reg, model.cbar, model.xbar)
        state = int(rng.choice(L, p=model.trans.Q[state]))
    return U, states


# ---------------------------------------------------------------------------
# estimator front end

class MSCopula(BaseEstimator):
    """Markov-switching copula as an estimator.

    Parameters mirror :func:`em_fit`; ``fit`` stores the model under
    ``model_`` and exposes ``loglik_``, ``aic_`` and ``bic_``.
    """

    def __init__(self, n_regimes=2, spec="simple", m=FORCING_WINDOW,
                 leverage=False, max_iter=500, tol=1e-6, mstep_iter=25,
                 n_restarts=3, random_state=0, n_jobs=1):
        self.n_regimes = n_regimes
        self.spec = spec
        self.m = m
        self.leverage = leverage
        self.max_iter = max_iter
        self.tol = tol
        self.mstep_iter = mstep_iter
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, U, X=None):
        self.model_ = em_fit(
            U, X, n_regimes=self.n_regimes, spec=self.spec, m=self.m,
            leverage=self.leverage, max_iter=self.max_iter, tol=self.tol,
            mstep_iter=self.mstep_iter, n_restarts=self.n_restarts,
            random_state=self.random_state, n_jobs=self.n_jobs)
        self.loglik_ = self.model_.loglik
        self.aic_ = self.model_.aic
        self.bic_ = self.model_.bic
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this MSCopula is not fitted yet")

    def filter(self, U, X=None) -> FilterResult:
        self._check_fitted()
        return hamilton_filter(U, X, self.model_)

    def predict_proba(self, U, X=None):
        """Smoothed regime probabilities."""
        self._check_fitted()
        sm, _ = smooth(self.filter(U, X), self.model_)
        return sm

    def predict(self, U, X=None):
        """Most likely regime per observation under smoothing."""
        return np.argmax(self.predict_proba(U, X), axis=1)

    def score(self, U, X=None):
        return self.filter(U, X).loglik

    def forecast_state(self, U, X=None) -> CopulaState:
        """State carrying the one-step-ahead mixture after the panel."""
        self._check_fitted()
        return self.filter(U, X).final_state(self.model_)
