"""Asset sale under the exponential OU model.

All thresholds are solved in log-price.  Each threshold equation is written
as a scale-free function of z that is positive below the optimal level and
negative above it, using only the ratio F'/F:

    exponential  x e^-x - (1 - e^-x) F'/F,  x = gamma nu e^z
    log          1 - (z + log nu) F'/F
    power        1 - F'/F  on the powered process, in w = p z

The lower bracket comes from the sign change of (L^Z - r) applied to the
payoff; the upper end is pushed out in steps of the stationary log-price
standard deviation until the sign flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import optimize

from .model import (
    NumericalError,
    ProblemSpec,
    Strategy,
    UtilityKind,
    ValidationError,
    XouParams,
    power_reduced_params,
)
from .special import DEFAULT_QUADRATURE, OuEigenParams, QuadratureConfig, scaled_eval

ROOT_XTOL = 1e-13
_MAX_EXPANSIONS = 400


def eigen_params(problem: ProblemSpec) -> OuEigenParams:
    """Eigenfunction parameters the value function is built from (reduced for power)."""
    if problem.utility.kind is UtilityKind.POWER:
        return OuEigenParams.from_model(power_reduced_params(problem), problem.r)
    return OuEigenParams.from_model(problem.model, problem.r)


def h_function(problem: ProblemSpec, z: float) -> float:
    """(L^Z - r) U_e(nu e^z) times the positive factor exp(x) / x, x = gamma nu e^z."""
    m: XouParams = problem.model
    x = problem.utility.gamma * problem.nu * math.exp(z)
    return 0.5 * m.eta**2 * (1.0 - x) + m.kappa * (m.theta - z) - problem.r * math.expm1(x) / x


def bracket_lower(problem: ProblemSpec) -> float:
    """Strict lower bound for the optimal log threshold.

    For power utility the bound is in the powered log-price w = p z.
    """
    if problem.is_gbm:
        raise TypeError("bracket_lower needs an XOU problem")
    m: XouParams = problem.model
    kind = problem.utility.kind
    if kind is UtilityKind.LOG:
        return (m.kappa * m.theta - problem.r * math.log(problem.nu)) / (m.kappa + problem.r)
    if kind is UtilityKind.POWER:
        red = power_reduced_params(problem)
        return red.theta + red.eta**2 / (2.0 * red.kappa) - problem.r / red.kappa

    # h decreases from +inf-ish (linear term) to -inf; bisect on its sign
    step = m.eta / math.sqrt(2.0 * m.kappa)
    lo, hi = m.theta - step, m.theta + step
    for _ in range(_MAX_EXPANSIONS):
        if h_function(problem, lo) > 0:
            break
        lo -= step
        step *= 2.0
    else:
        raise NumericalError("h bracket expansion failed (lower)", lower=lo)
    step = m.eta / math.sqrt(2.0 * m.kappa)
    for _ in range(_MAX_EXPANSIONS):
        if h_function(problem, hi) < 0:
            break
        hi += step
    else:
        raise NumericalError("h bracket expansion failed (upper)", upper=hi)
    while hi - lo > ROOT_XTOL * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if h_function(problem, mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class _RatioCache:
    """Per-solve memo of F'/F keyed by z."""

    def __init__(self, eig: OuEigenParams, cfg: QuadratureConfig):
        self.eig, self.cfg, self._store = eig, cfg, {}

    def __call__(self, z: float) -> float:
        z = float(z)
        if z not in self._store:
            f0, _ = scaled_eval(self.eig, z, 0, "F", self.cfg)
            f1, _ = scaled_eval(self.eig, z, 1, "F", self.cfg)
            self._store[z] = f1 / f0
        return self._store[z]


def _exp_eq(z, ratio, gn):
    x = gn * math.exp(z)
    return (x * math.exp(-x) + math.expm1(-x) * ratio(z)) / max(1.0, x)


def _log_eq(z, ratio, log_nu):
    return 1.0 - (z + log_nu) * ratio(z)


def _pow_eq(w, ratio):
    return 1.0 - ratio(w)


def threshold_equation(problem: ProblemSpec, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Normalized threshold equation as a function of the solve variable."""
    ratio = _RatioCache(eigen_params(problem), cfg)
    kind = problem.utility.kind
    if kind is UtilityKind.EXPONENTIAL:
        return partial(_exp_eq, ratio=ratio, gn=problem.utility.gamma * problem.nu)
    if kind is UtilityKind.LOG:
        return partial(_log_eq, ratio=ratio, log_nu=math.log(problem.nu))
    return partial(_pow_eq, ratio=ratio)


@dataclass(frozen=True)
class XouSolution:
    """``b`` is the log-price threshold; the sell level is exp(b)."""

    problem: ProblemSpec
    b: float
    log_coefficient: float
    eigen: OuEigenParams
    strategy: Strategy
    bracket: float
    cfg: QuadratureConfig = DEFAULT_QUADRATURE

    @property
    def coefficient(self) -> float:
        """Pasting constant multiplying F; may under/overflow when F(b) is extreme."""
        return math.exp(self.log_coefficient)

    @property
    def threshold(self) -> float:
        return self.strategy.level

    @property
    def utility(self):
        return self.problem.utility

    @property
    def _p(self) -> float:
        return self.utility.p if self.utility.kind is UtilityKind.POWER else 1.0

    def continuation_in_z(self, z, order: int = 0):
        """d^k/dz^k of the continuation branch coefficient * F(p z)."""
        p = self._p
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i, zz in enumerate(z):
            m, shift = scaled_eval(self.eigen, p * zz, order, "F", self.cfg)
            out[i] = p**order * m * math.exp(self.log_coefficient + shift)
        return out

    def continuation_value(self, x):
        x = np.asarray(x, dtype=float)
        out = self.continuation_in_z(np.log(x).ravel()).reshape(x.shape)
        return out[()] if out.ndim == 0 else out


def solve_xou(problem: ProblemSpec, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> XouSolution:
    if problem.is_gbm:
        raise TypeError("solve_xou needs an XOU problem")
    eig = eigen_params(problem)
    eq = threshold_equation(problem, cfg)
    lo = bracket_lower(problem)
    kind = problem.utility.kind
    if kind is UtilityKind.LOG:
        # the root also satisfies b + log(nu) > 0
        lo = max(lo, -math.log(problem.nu))
    f_lo = eq(lo)
    if f_lo <= 0:
        raise NumericalError("threshold equation not positive at lower bracket", lower=lo, value=f_lo)
    step = eig.length
    hi = lo + step
    for _ in range(_MAX_EXPANSIONS):
        if eq(hi) < 0:
            break
        lo, hi = hi, hi + step
    else:
        raise NumericalError("upper bracket not found", lower=lo, upper=hi)
    root = optimize.brentq(eq, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)

    nu = problem.nu
    f0, shift = scaled_eval(eig, root, 0, "F", cfg)
    log_F = math.log(f0) + shift
    if kind is UtilityKind.EXPONENTIAL:
        b = root
        payoff = -math.expm1(-problem.utility.gamma * nu * math.exp(b))
    elif kind is UtilityKind.LOG:
        b = root
        payoff = b + math.log(nu)
    else:
        p = problem.utility.p
        b = root / p
        payoff = nu**p * math.exp(root) / p
    if not payoff > 0:
        raise NumericalError("non-positive payoff at the threshold", payoff=payoff, b=b)
    if not math.isfinite(math.exp(b)):
        raise NumericalError("sell level overflows double precision", log_threshold=b)
    return XouSolution(problem, b, math.log(payoff) - log_F, eig, Strategy.threshold(math.exp(b)),
                       bracket_lower(problem), cfg)


def _prices(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0) or np.any(~np.isfinite(arr)):
        raise ValidationError("price", "must be finite and > 0")
    return arr


def eval_value_xou(sol: XouSolution, x):
    """Value function at price(s) x."""
    arr = _prices(x)
    flat = arr.ravel()
    stop = flat >= sol.threshold
    out = np.empty_like(flat)
    out[stop] = sol.problem.payoff(flat[stop])
    if np.any(~stop):
        out[~stop] = sol.continuation_in_z(np.log(flat[~stop]))
    out = out.reshape(arr.shape)
    return out[()] if out.ndim == 0 else out


def eval_ce_xou(sol: XouSolution, x):
    """(certainty equivalent, liquidation premium) at price(s) x."""
    arr = _prices(x)
    flat = arr.ravel()
    nu = sol.problem.nu
    stop = flat >= sol.threshold
    ce = nu * flat
    if np.any(~stop):
        v = sol.continuation_in_z(np.log(flat[~stop]))
        kind = sol.utility.kind
        if kind is UtilityKind.EXPONENTIAL:
            if np.any(v >= 1) or np.any(v < 0):
                raise NumericalError("exponential CE log-argument outside (0, 1]")
            ce[~stop] = -np.log1p(-v) / sol.utility.gamma
        elif kind is UtilityKind.LOG:
            ce[~stop] = np.exp(v)
        else:
            ce[~stop] = sol.utility.inverse(v)
    premium = ce - nu * flat
    premium[stop] = 0.0
    ce, premium = ce.reshape(arr.shape), premium.reshape(arr.shape)
    if ce.ndim == 0:
        return ce[()], premium[()]
    return ce, premium
