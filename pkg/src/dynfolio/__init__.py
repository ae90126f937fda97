"""Score-driven marginals, regime-switching copulas and moment-based allocation."""

from dynfolio import allocate, astdist, copula, evaluate, gas, moments
from dynfolio.allocate import mean_variance_weights, optimize_weights
from dynfolio.copula import MSCopula, em_fit, hamilton_filter, select_model
from dynfolio.evaluate import (BacktestSchedule, management_fee,
                               modified_sharpe, run_backtest)
from dynfolio.gas import ScoreDrivenMarginal, fit_marginal, pit_transform
from dynfolio.moments import compute_moments, moment_tensors, simulate_joint

__version__ = "0.1.0"

__all__ = [
    "allocate", "astdist", "copula", "evaluate", "gas", "moments",
    "mean_variance_weights", "optimize_weights",
    "MSCopula", "em_fit", "hamilton_filter", "select_model",
    "BacktestSchedule", "management_fee", "modified_sharpe", "run_backtest",
    "ScoreDrivenMarginal", "fit_marginal", "pit_transform",
    "compute_moments", "moment_tensors", "simulate_joint",
    "__version__",
]
