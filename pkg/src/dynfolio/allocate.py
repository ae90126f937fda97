"""CRRA portfolio choice on fourth-order moment tensors.

Expected utility of next-period wealth is approximated by a fourth-order
Taylor expansion around wealth 1, which turns the objective into a
polynomial in the portfolio's first four non-central return moments.
Those in turn are exact contractions of the joint moment tensors, so one
simulation pays for the whole weight search.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .moments import MomentTensors

WEIGHT_BOUND = 5.0

# Quadratic penalty steering the eliminated coordinate back into the box.
_BOX_PENALTY = 1e6


@dataclass(frozen=True)
class UtilityConfig:
    """Risk aversion and expansion order for the Taylor objective."""

    upsilon: float = 10.0
    order: int = 4

    def __post_init__(self):
        if not np.isfinite(self.upsilon) or self.upsilon < 1.0:
            raise ValueError(f"upsilon must be >= 1, got {self.upsilon}")
        if self.order not in (2, 3, 4):
            raise ValueError(f"order must be 2, 3 or 4, got {self.order}")


@dataclass
class PortfolioWeights:
    """Optimizer output: weights sum to one and respect the box."""

    weights: np.ndarray
    objective: float
    gradient_norm: float
    boundary: bool
    bound: float = WEIGHT_BOUND

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")
        if np.any(np.abs(self.weights) > self.bound + 1e-8):
            raise ValueError(f"weights must lie within [-{self.bound}, {self.bound}]")


def crra_utility(wealth, upsilon):
    """Power utility of wealth, log at upsilon = 1.

    Defined only for positive wealth; the caller handles ruin paths.
    """
    wealth = np.asarray(wealth, dtype=float)
    if upsilon < 1.0:
        raise ValueError(f"upsilon must be >= 1, got {upsilon}")
    if np.any(wealth <= 0.0):
        raise ValueError("wealth must be positive under CRRA utility")
    if upsilon == 1.0:
        out = np.log(wealth)
    else:
        out = wealth ** (1.0 - upsilon) / (1.0 - upsilon)
    return float(out) if out.ndim == 0 else out


def portfolio_moments(weights, tensors):
    """Central portfolio return moments from the joint tensors.

    Returns (mean, variance, third, fourth); exact contractions, so they
    agree with direct statistics of ``draws @ weights`` to rounding.
    """
    lam = np.asarray(weights, dtype=float)
    if lam.shape != (tensors.n_assets,):
        raise ValueError(
            f"expected {tensors.n_assets} weights, got shape {lam.shape}")
    lam2 = np.kron(lam, lam)
    mu = float(lam @ tensors.m1)
    var = float(lam @ tensors.m2 @ lam)
    third = float(lam @ tensors.m3 @ lam2)
    fourth = float(lam @ tensors.m4 @ np.kron(lam2, lam))
    return mu, var, third, fourth


def noncentral_moments(mu, var, third, fourth):
    """Map central return moments to raw moments about zero."""
    m2 = var + mu * mu
    m3 = third + 3.0 * var * mu + mu ** 3
    m4 = fourth + 4.0 * third * mu + 6.0 * var * mu * mu + mu ** 4
    return mu, m2, m3, m4


def _taylor_coeffs(upsilon, order):
    # Derivatives of CRRA utility at wealth 1, divided by k!.
    c0 = 0.0 if upsilon == 1.0 else 1.0 / (1.0 - upsilon)
    c = [c0, 1.0, -upsilon / 2.0]
    if order >= 3:
        c.append(upsilon * (upsilon + 1.0) / 6.0)
    if order >= 4:
        c.append(-upsilon * (upsilon + 1.0) * (upsilon + 2.0) / 24.0)
    return c


def expected_utility_taylor(weights, tensors, upsilon, order=4):
    """Fourth-order approximation of E[U(1 + lam @ y)]."""
    config = UtilityConfig(upsilon=upsilon, order=order)
    m = noncentral_moments(*portfolio_moments(weights, tensors))
    c = _taylor_coeffs(config.upsilon, config.order)
    return c[0] + sum(ck * mk for ck, mk in zip(c[1:], m))


def utility_gradient(weights, tensors, upsilon, order=4):
    """Analytic gradient of the Taylor objective in all N weights."""
    config = UtilityConfig(upsilon=upsilon, order=order)
    lam = np.asarray(weights, dtype=float)
    lam2 = np.kron(lam, lam)
    mu, var, third, fourth = portfolio_moments(lam, tensors)

    g_mu = tensors.m1
    g_var = 2.0 * tensors.m2 @ lam
    # The tensors enter through symmetric contractions, so each order-k
    # term differentiates to k times one contraction.
    g_third = 3.0 * tensors.m3 @ lam2
    g_fourth = 4.0 * tensors.m4 @ np.kron(lam2, lam)

    g_m2 = g_var + 2.0 * mu * g_mu
    g_m3 = g_third + 3.0 * (mu * g_var + var * g_mu) + 3.0 * mu * mu * g_mu
    g_m4 = (g_fourth + 4.0 * (mu * g_third + third * g_mu)
            + 6.0 * (mu * mu * g_var + 2.0 * var * mu * g_mu)
            + 4.0 * mu ** 3 * g_mu)

    c = _taylor_coeffs(config.upsilon, config.order)
    grads = [g_mu, g_m2, g_m3, g_m4]
    total = np.zeros_like(lam)
    for ck, gk in zip(c[1:], grads):
        total += ck * gk
    return total


def mean_variance_weights(tensors, upsilon):
    """Closed-form argmax of the order-2 objective under sum-to-one.

    The quadratic term couples mean and variance through the non-central
    second moment, giving H = upsilon * (M2 + m1 m1').
    """
    m1 = tensors.m1
    H = upsilon * (tensors.m2 + np.outer(m1, m1))
    ones = np.ones_like(m1)
    sol = np.linalg.solve(H, np.column_stack([m1, ones]))
    h_m, h_1 = sol[:, 0], sol[:, 1]
    eta = (ones @ h_m - 1.0) / (ones @ h_1)
    return h_m - eta * h_1


def _projected_gradient_norm(lam, grad, bound):
    """Stationarity residual under the budget and active box faces.

    The budget multiplier is the mean gradient over free coordinates;
    active faces only contribute when their implied multiplier has the
    wrong sign.
    """
    at_hi = lam >= bound - 1e-8
    at_lo = lam <= -bound + 1e-8
    free = ~(at_hi | at_lo)
    eta = grad[free].mean() if free.any() else grad.mean()
    resid = grad - eta
    resid[at_hi] = np.minimum(resid[at_hi], 0.0)
    resid[at_lo] = np.maximum(resid[at_lo], 0.0)
    return float(np.linalg.norm(resid))


def optimize_weights(tensors, upsilon, order=4, bound=WEIGHT_BOUND,
                     n_random_starts=8, random_state=None):
    """Maximize the Taylor objective over the budget-constrained box.

    The sum-to-one constraint is eliminated by substituting the last
    weight; the free block gets plain box bounds while the eliminated
    coordinate is kept inside by a quadratic penalty that is inactive at
    any interior solution.  Multi-start: equal weights, the closed-form
    mean-variance point, and random simplex draws.
    """
    UtilityConfig(upsilon=upsilon, order=order)
    n = tensors.n_assets
    if n == 1:
        lam = np.ones(1)
        return PortfolioWeights(
            weights=lam,
            objective=expected_utility_taylor(lam, tensors, upsilon, order),
            gradient_norm=0.0, boundary=bool(bound < 1.0), bound=bound)

    def full(v):
        return np.append(v, 1.0 - v.sum())

    def negobj(v):
        lam = full(v)
        val = -expected_utility_taylor(lam, tensors, upsilon, order)
        grad = -utility_gradient(lam, tensors, upsilon, order)
        gv = grad[:-1] - grad[-1]
        excess = abs(lam[-1]) - bound
        if excess > 0.0:
            val += _BOX_PENALTY * excess * excess
            # d|lam_N|/dv_i = -sign(lam_N) for every free coordinate
            gv -= 2.0 * _BOX_PENALTY * excess * np.sign(lam[-1])
        return val, gv

    starts = [np.full(n, 1.0 / n)]
    try:
        mv = mean_variance_weights(tensors, upsilon)
        starts.append(np.clip(mv, -bound, bound))
    except np.linalg.LinAlgError:
        pass
    rng = np.random.default_rng(random_state)
    for _ in range(n_random_starts):
        starts.append(rng.dirichlet(np.ones(n)))

    box = [(-bound, bound)] * (n - 1)
    best = None
    for lam0 in starts:
        v0 = np.clip(lam0[:-1], -bound, bound)
        res = minimize(negobj, v0, jac=True, method="L-BFGS-B", bounds=box,
                       options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10})
        lam = full(res.x)
        if abs(lam[-1]) > bound + 1e-8:
            continue
        obj = -res.fun
        # Objective decides; ties within 1e-10 go to the shorter vector.
        if (best is None or obj > best[0] + 1e-10
                or (obj > best[0] - 1e-10
                    and np.linalg.norm(lam) < np.linalg.norm(best[1]))):
            best = (obj, lam)
    if best is None:
        raise RuntimeError("no feasible optimum found")

    obj, lam = best
    lam = np.clip(lam, -bound, bound)
    lam[-1] = 1.0 - lam[:-1].sum()
    grad = utility_gradient(lam, tensors, upsilon, order)
    gnorm = _projected_gradient_norm(lam, grad, bound)
    boundary = bool(np.any(np.abs(lam) >= bound - 1e-6))
    return PortfolioWeights(weights=lam, objective=float(obj),
                            gradient_norm=gnorm, boundary=boundary,
                            bound=bound)
