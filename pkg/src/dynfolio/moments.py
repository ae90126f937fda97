"""Joint moment tensors of the one-step-ahead return distribution.

The next-period law has no closed form: asymmetric Student-t margins are
coupled through a regime mixture of Student-t copulas.  Moments are
therefore estimated from a large simulated panel.  Draws are generated in
fixed-size chunks with independent substreams so the result is identical
for any worker count, and common random numbers across repeated calls make
weight searches smooth in the seed.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import stdtr

from . import astdist
from .copula import U_CLIP, to_correlation
from .validation import as_panel, check_prob_vector

DEFAULT_DRAWS = 50_000

# Partition width for the draw loop.  Chunk boundaries, not the worker
# count, define the substreams, so n_jobs never changes the output.
CHUNK = 8192


@dataclass
class MomentTensors:
    """Central co-moment tensors in flattened (matrix) layout.

    ``m3[i, j * N + k]`` holds ``E[(y_i - mu_i)(y_j - mu_j)(y_k - mu_k)]``
    with 0-based indices; in 1-based notation column ``(j - 1) * N + k``.
    ``m4[i, j * N**2 + k * N + l]`` extends the same row-major map one
    level deeper.  ``m1`` is the plain mean vector and ``m2`` the usual
    covariance matrix, so all four slot directly into the portfolio
    formulas ``lam @ m2 @ lam``, ``lam @ m3 @ kron(lam, lam)`` and
    ``lam @ m4 @ kron(lam, lam, lam)``.
    """

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray
    n_draws: int
    seed: object = None

    def __post_init__(self):
        self.m1 = np.asarray(self.m1, dtype=float)
        self.m2 = np.asarray(self.m2, dtype=float)
        self.m3 = np.asarray(self.m3, dtype=float)
        self.m4 = np.asarray(self.m4, dtype=float)
        n = self.m1.shape[0]
        if self.m1.ndim != 1:
            raise ValueError("m1 must be a vector")
        if self.m2.shape != (n, n):
            raise ValueError(f"m2 must have shape {(n, n)}, got {self.m2.shape}")
        if self.m3.shape != (n, n * n):
            raise ValueError(f"m3 must have shape {(n, n * n)}, got {self.m3.shape}")
        if self.m4.shape != (n, n ** 3):
            raise ValueError(f"m4 must have shape {(n, n ** 3)}, got {self.m4.shape}")

    @property
    def n_assets(self):
        return self.m1.shape[0]

    def to_csv(self, directory, prefix="moments"):
        """Write one CSV per tensor, each with a layout comment line."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n = self.n_assets
        notes = {
            "m1": f"mean vector, {n} assets, {self.n_draws} draws, seed {self.seed}",
            "m2": "covariance, row i column j",
            "m3": "third central co-moments, row i column j*N+k (0-based)",
            "m4": "fourth central co-moments, row i column j*N**2+k*N+l (0-based)",
        }
        paths = {}
        for name, note in notes.items():
            path = directory / f"{prefix}_{name}.csv"
            np.savetxt(path, np.atleast_2d(getattr(self, name)),
                       delimiter=",", header=note)
            paths[name] = path
        return paths


def _chol_or_raise(C, label):
    R = to_correlation(C)
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ValueError(f"{label} is not positive definite") from None


def _draw_chunk(seed_seq, n, chols, nus, pi, marginals):
    """One deterministic block of joint draws.

    Regime, then copula pair, then the margin map: a Student-t vector with
    the regime's correlation is pushed through its own CDF to get uniforms
    and through each asset's quantile to get returns.  The t vector is left
    on unit scale; the CDF of the matching scale family gives the same
    uniforms either way.
    """
    rng = np.random.default_rng(seed_seq)
    n_assets = chols[0].shape[0]
    labels = rng.choice(len(chols), size=n, p=pi)
    z = rng.standard_normal((n, n_assets))
    w = rng.chisquare(nus[labels])
    u = np.empty((n, n_assets))
    for s, Lc in enumerate(chols):
        mask = labels == s
        if not mask.any():
            continue
        x = z[mask] @ Lc.T
        x *= np.sqrt(nus[s] / w[mask])[:, None]
        u[mask] = stdtr(nus[s], x)
    np.clip(u, U_CLIP, 1.0 - U_CLIP, out=u)
    y = np.empty_like(u)
    for i, params in enumerate(marginals):
        y[:, i] = astdist.quantile(u[:, i], *params)
    return y


def simulate_joint(marginals, model, state, n_draws=DEFAULT_DRAWS,
                   random_state=None, n_jobs=1):
    """Simulate next-period returns under the fitted one-step law.

    Parameters
    ----------
    marginals : sequence of AstParams
        One-step-ahead parameters, one per asset.
    model : MSCopulaModel
    state : CopulaState
        Carries the per-regime recursion matrices and the predictive
        regime probabilities for the target period.
    n_draws : int
    random_state : seed for the draw substreams.
    n_jobs : int
        Worker threads.  Output is byte-identical for any value.

    Returns
    -------
    (n_draws, n_assets) array of simulated simple returns.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    n_assets = len(marginals)
    if n_assets != state.C.shape[1]:
        raise ValueError(
            f"got {n_assets} marginals for {state.C.shape[1]} assets")
    marginals = [p if isinstance(p, astdist.AstParams)
                 else astdist.AstParams(*p) for p in marginals]
    pi = check_prob_vector(np.asarray(state.predicted, dtype=float),
                           "state.predicted")
    chols = [_chol_or_raise(state.C[s], f"one-step matrix of regime {s}")
             for s in range(model.n_regimes)]
    nus = np.array([r.nu_c for r in model.regimes])

    starts = list(range(0, n_draws, CHUNK))
    seeds = np.random.SeedSequence(random_state).spawn(len(starts))
    out = np.empty((n_draws, n_assets))

    def run(k):
        lo = starts[k]
        hi = min(lo + CHUNK, n_draws)
        out[lo:hi] = _draw_chunk(seeds[k], hi - lo, chols, nus, pi, marginals)

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, range(len(starts))))
    else:
        for k in range(len(starts)):
            run(k)
    return out


def moment_tensors(draws, seed=None):
    """Centered empirical moment tensors of a simulated panel.

    Normalization is 1/B throughout, matching the plain definition
    ``E[(y - Ey) ** k]`` rather than any unbiased variant; the Taylor
    utility formulas expect exactly these quantities.
    """
    draws = as_panel(draws, "draws", min_rows=2)
    B = draws.shape[0]
    m1 = draws.mean(axis=0)
    d = draws - m1
    m2 = d.T @ d / B
    m3 = np.einsum("ti,tj,tk->ijk", d, d, d) / B
    m4 = np.einsum("ti,tj,tk,tl->ijkl", d, d, d, d) / B
    n = draws.shape[1]
    return MomentTensors(m1=m1, m2=m2, m3=m3.reshape(n, n * n),
                         m4=m4.reshape(n, n ** 3), n_draws=B, seed=seed)


def compute_moments(marginals, model, state, n_draws=DEFAULT_DRAWS,
                    random_state=None, n_jobs=1):
    """simulate_joint followed by moment_tensors, tagging the seed."""
    draws = simulate_joint(marginals, model, state, n_draws=n_draws,
                           random_state=random_state, n_jobs=n_jobs)
    return moment_tensors(draws, seed=random_state)


def joint_moment_quad(marginals, R, nu_c, orders, central=True,
                      tail=1e-14):
    """Quadrature cross-check of a single joint moment, one or two assets.

    Integrates ``E[prod_i (y_i - c_i) ** a_i]`` under one Student-t copula
    by substituting u_i = T(z_i; nu_c), which turns the copula weight into
    a joint t density over z.  Adaptive quadrature over a box holding all
    but ``tail`` of that density is accurate to far below Monte Carlo
    noise for the orders used here; the truncated tail contributes
    O(tail^(1 - k/nu)) to an order-k moment, so the default box is wide.
    Only a diagnostic: cost grows too fast with dimension for anything
    beyond two assets.
    """
    from scipy.integrate import dblquad, quad
    from scipy.special import stdtrit

    marginals = [p if isinstance(p, astdist.AstParams)
                 else astdist.AstParams(*p) for p in marginals]
    orders = np.atleast_1d(orders).astype(int)
    if len(marginals) not in (1, 2) or len(orders) != len(marginals):
        raise ValueError("quadrature cross-check covers one or two assets")
    if np.any(orders < 0):
        raise ValueError("moment orders must be non-negative")
    centers = [astdist.mean(p) if central else 0.0 for p in marginals]

    def pull(z, params):
        u = np.clip(stdtr(nu_c, z), U_CLIP, 1.0 - U_CLIP)
        return astdist.quantile(u, *params)

    lim = abs(stdtrit(nu_c, tail))
    if len(marginals) == 1:
        from scipy.stats import t as student_t
        f = student_t(df=nu_c).pdf
        val, _ = quad(
            lambda z: (pull(z, marginals[0]) - centers[0]) ** orders[0] * f(z),
            -lim, lim, limit=400)
        return val

    R = np.asarray(R, dtype=float)
    rho = float(R[0, 1])
    det = 1.0 - rho * rho
    if det <= 0.0:
        raise ValueError("correlation must be strictly inside (-1, 1)")
    from scipy.special import gammaln
    logk = (gammaln((nu_c + 2.0) / 2.0) - gammaln(nu_c / 2.0)
            - np.log(nu_c * np.pi) - 0.5 * np.log(det))

    def density(z1, z2):
        q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / det
        return np.exp(logk - (nu_c + 2.0) / 2.0 * np.log1p(q / nu_c))

    def integrand(z2, z1):
        g1 = (pull(z1, marginals[0]) - centers[0]) ** orders[0]
        g2 = (pull(z2, marginals[1]) - centers[1]) ** orders[1]
        return g1 * g2 * density(z1, z2)

    val, _ = dblquad(integrand, -lim, lim, -lim, lim, epsabs=1e-10,
                     epsrel=1e-8)
    return val
