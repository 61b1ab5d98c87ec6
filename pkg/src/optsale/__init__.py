"""Optimal timing to sell a holding under exponential, log and power utility.

Prices follow either a geometric Brownian motion or an exponential
Ornstein-Uhlenbeck process; the optimal rule is a sell threshold, computed
in closed form (GBM) or from the OU eigenfunctions (XOU).
"""

__version__ = "0.1.0"

from .gbm import GbmSolution, eval_ce_gbm, eval_value_gbm, solve_gbm
from .model import (
    UNBOUNDED,
    GbmParams,
    NumericalError,
    ProblemSpec,
    Strategy,
    StrategyKind,
    UtilityKind,
    UtilitySpec,
    ValidationError,
    XouParams,
    classify_strategy,
)
from .special import OuEigenParams, QuadratureConfig, eval_F, eval_G
from .verify import (
    McConfig,
    McEstimate,
    mc_strategy_value,
    oracle_threshold_sweep,
    smooth_pasting_audit,
    vi_residual_grid,
)
from .xou import XouSolution, eval_ce_xou, eval_value_xou, solve_xou

__all__ = [
    "UNBOUNDED", "GbmParams", "GbmSolution", "McConfig", "McEstimate", "NumericalError",
    "OuEigenParams", "ProblemSpec", "QuadratureConfig", "Strategy", "StrategyKind",
    "UtilityKind", "UtilitySpec", "ValidationError", "XouParams", "XouSolution",
    "classify_strategy", "eval_F", "eval_G", "eval_ce_gbm", "eval_ce_xou", "eval_value_gbm",
    "eval_value_xou", "mc_strategy_value", "oracle_threshold_sweep", "smooth_pasting_audit",
    "solve_gbm", "solve_xou", "vi_residual_grid",
]
