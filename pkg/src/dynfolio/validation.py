"""Input validation helpers shared across estimators and the CLI."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_series",
    "as_panel",
    "check_not_constant",
    "check_unit_interval",
    "check_prob_vector",
    "check_correlation",
]


def as_series(y, name="y", min_len=1):
    """Coerce to a finite 1-d float array of minimum length."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        y = np.squeeze(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {y.shape}")
    if len(y) < min_len:
        raise ValueError(f"{name} needs at least {min_len} observations, "
                         f"got {len(y)}")
    if not np.isfinite(y).all():
        raise ValueError(f"{name} contains non-finite values")
    return y


def as_panel(x, name="panel", min_rows=1, n_cols=None):
    """Coerce to a finite 2-d float array (rows = time)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, "
                         f"got {x.shape[0]}")
    if n_cols is not None and x.shape[1] != n_cols:
        raise ValueError(f"{name} must have {n_cols} columns, "
                         f"got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_not_constant(y, name="y"):
    y = np.asarray(y)
    if np.ptp(y, axis=0).min() <= 0.0:
        raise ValueError(f"{name} is constant; cannot be modelled")
    return y


def check_unit_interval(u, name="u", open_interval=True):
    u = np.asarray(u, dtype=float)
    bad = ((u <= 0.0) | (u >= 1.0)) if open_interval else ((u < 0.0) | (u > 1.0))
    if np.any(bad):
        raise ValueError(f"{name} must lie in the unit interval")
    return u


def check_prob_vector(p, name="p", atol=1e-8):
    p = np.asarray(p, dtype=float)
    if np.any(p < -atol) or abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} is not a probability vector")
    return np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum()


def check_correlation(r, name="R", atol=1e-8):
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(r, r.T, atol=atol):
        raise ValueError(f"{name} must be symmetric")
    if not np.allclose(np.diag(r), 1.0, atol=atol):
        raise ValueError(f"{name} must have unit diagonal")
    return r
