"""Asset sale under geometric Brownian motion.

Exponential utility sells at the root of alpha (e^x - 1) = x with
x = gamma * nu * a (or immediately when r >= mu); log utility sells at the
explicit level exp(1/alpha) / nu; power utility is always trivial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .model import (
    UNBOUNDED,
    GbmParams,
    NumericalError,
    ProblemSpec,
    Strategy,
    StrategyKind,
    UtilityKind,
    ValidationError,
    classify_strategy,
)

ROOT_XTOL = 1e-14
ROOT_RTOL = 4 * np.finfo(float).eps
_MAX_EXPANSIONS = 200


def compute_alpha(gbm: GbmParams, r: float) -> float:
    """Positive exponent of the increasing power solution s**alpha of L^S f = r f."""
    m = gbm.mu / gbm.sigma**2
    return (0.5 - m) + math.sqrt((m - 0.5) ** 2 + 2.0 * r / gbm.sigma**2)


def compute_beta(gbm: GbmParams, r: float) -> float:
    """Negative exponent of the decreasing solution; only used in diagnostics."""
    m = gbm.mu / gbm.sigma**2
    return (0.5 - m) - math.sqrt((m - 0.5) ** 2 + 2.0 * r / gbm.sigma**2)


def _g_scaled(y: float, gbm: GbmParams, r: float) -> float:
    # g(s) with y = gamma*nu*s; sign of (L^S - r) U_e(nu s)
    return gbm.mu * y - 0.5 * gbm.sigma**2 * y * y - r * math.expm1(y)


def exp_bracket_root(gbm: GbmParams, r: float) -> float:
    """Positive root (in y = gamma*nu*s units) of the concave function g.

    g(0) = 0 and g is positive just right of zero when mu > r, so plain
    bisection on the sign suffices once an upper end with g < 0 is found.
    """
    if r >= gbm.mu:
        raise ValueError("g has no positive root when r >= mu")
    hi = 1.0
    for _ in range(_MAX_EXPANSIONS):
        if _g_scaled(hi, gbm, r) < 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("no sign change for g", upper=hi)
    lo = 0.0
    while hi - lo > ROOT_XTOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _g_scaled(mid, gbm, r) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _exp_threshold_eq(x: float, alpha: float) -> float:
    return alpha * math.expm1(x) - x


def solve_exp_scaled(gbm: GbmParams, r: float) -> tuple[float, float]:
    """Root x* of alpha (e^x - 1) = x together with the lower bracket x_phi."""
    alpha = compute_alpha(gbm, r)
    lo = exp_bracket_root(gbm, r)
    if _exp_threshold_eq(lo, alpha) >= 0:
        raise NumericalError("threshold equation not negative at bracket root", x_phi=lo, alpha=alpha)
    hi = 2.0 * lo
    for _ in range(_MAX_EXPANSIONS):
        if _exp_threshold_eq(hi, alpha) > 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("threshold bracket expansion failed", lower=lo, upper=hi, alpha=alpha)
    x = optimize.brentq(_exp_threshold_eq, lo, hi, args=(alpha,), xtol=ROOT_XTOL, rtol=ROOT_RTOL)
    return x, lo


@dataclass(frozen=True)
class GbmSolution:
    problem: ProblemSpec
    alpha: float
    strategy: Strategy
    coefficient: float | None = None

    @property
    def threshold(self) -> float | None:
        return self.strategy.level

    @property
    def utility(self):
        return self.problem.utility

    def continuation_value(self, s):
        """Branch A s^alpha (exp) or (nu s)^alpha / (alpha e) (log), valid for all s."""
        s = np.asarray(s, dtype=float)
        if self.utility.kind is UtilityKind.LOG:
            return self.coefficient * (self.problem.nu * s) ** self.alpha
        return self.coefficient * s**self.alpha

    def continuation_derivatives(self, s):
        v = self.continuation_value(s)
        s = np.asarray(s, dtype=float)
        a = self.alpha
        return v, a * v / s, a * (a - 1.0) * v / s**2


def solve_gbm(problem: ProblemSpec) -> GbmSolution:
    if not problem.is_gbm:
        raise TypeError("solve_gbm needs a GBM problem")
    gbm, r, nu = problem.model, problem.r, problem.nu
    alpha = compute_alpha(gbm, r)
    kind = problem.utility.kind
    if kind is UtilityKind.LOG:
        level = math.exp(1.0 / alpha) / nu
        return GbmSolution(problem, alpha, Strategy.threshold(level), 1.0 / (alpha * math.e))
    strategy = classify_strategy(problem)
    if strategy.kind is not StrategyKind.THRESHOLD:
        return GbmSolution(problem, alpha, strategy)
    x, _ = solve_exp_scaled(gbm, r)
    gn = problem.utility.gamma * nu
    level = x / gn
    coefficient = -math.expm1(-x) * level ** (-alpha)
    return GbmSolution(problem, alpha, Strategy.threshold(level), coefficient)


def _as_array(s):
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise ValidationError("price", "must be finite and >= 0")
    return arr


def _unwrap(arr):
    return arr[()] if arr.ndim == 0 else arr


def eval_value_gbm(sol: GbmSolution, s):
    """Value function V(s, nu); UNBOUNDED in the wait-forever regime."""
    arr = _as_array(s)
    kind = sol.strategy.kind
    if kind is StrategyKind.WAIT_FOREVER:
        return UNBOUNDED
    if sol.utility.kind is UtilityKind.LOG and np.any(arr == 0):
        raise ValidationError("price", "log utility is undefined at s = 0")
    if kind is StrategyKind.SELL_NOW:
        return _unwrap(np.asarray(sol.problem.payoff(arr)))
    stop = arr >= sol.threshold
    out = np.empty_like(arr)
    out[stop] = sol.problem.payoff(arr[stop])
    out[~stop] = sol.continuation_value(arr[~stop])
    return _unwrap(out)


def eval_ce_gbm(sol: GbmSolution, s):
    """(certainty equivalent, liquidation premium) at price s."""
    arr = _as_array(s)
    if sol.strategy.kind is StrategyKind.WAIT_FOREVER:
        return UNBOUNDED, UNBOUNDED
    nu = sol.problem.nu
    if sol.strategy.kind is StrategyKind.SELL_NOW:
        ce = nu * arr
        return _unwrap(ce), _unwrap(np.zeros_like(ce))
    if sol.utility.kind is UtilityKind.LOG and np.any(arr == 0):
        raise ValidationError("price", "log utility is undefined at s = 0")
    shape = arr.shape
    arr = arr.ravel()
    stop = arr >= sol.threshold
    ce = np.empty_like(arr)
    ce[stop] = nu * arr[stop]
    cont = sol.continuation_value(arr[~stop])
    if sol.utility.kind is UtilityKind.EXPONENTIAL:
        arg = 1.0 - cont
        if np.any(arg <= 0) or np.any(arg > 1):
            raise NumericalError("exponential CE log-argument outside (0, 1]")
        ce[~stop] = -np.log1p(-cont) / sol.utility.gamma
    else:
        ce[~stop] = np.exp(cont)
    premium = ce - nu * arr
    premium[stop] = 0.0
    return _unwrap(ce.reshape(shape)), _unwrap(premium.reshape(shape))
