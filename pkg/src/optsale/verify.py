"""Independent checks of the analytic solutions.

* Monte-Carlo valuation of a threshold rule with exact transitions
  (GBM log-price is Brownian, OU log-price has a Gaussian kernel), so the
  only biases are grid-time hitting and horizon truncation.
* A brute-force sweep over candidate thresholds using common random numbers.
* Variational-inequality residuals and smooth-pasting gaps computed from
  analytic derivatives of the active branch.

Grid-time hitting only sees the path at multiples of dt, so it stops later
than continuous monitoring would; the MC value of a fixed threshold is
therefore biased (one-sided, O(sqrt(dt)) in the barrier shift).  Near the
optimal threshold the value is flat in the barrier, which makes the effect
second order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .gbm import GbmSolution, eval_value_gbm
from .model import (
    GbmParams,
    ProblemSpec,
    StrategyKind,
    UtilityKind,
    XouParams,
    _require,
)
from .xou import XouSolution, eval_value_xou

DEFAULT_TOL = 1e-6
PASTING_TOL = 1e-8


@dataclass(frozen=True)
class McConfig:
    """Monte-Carlo settings. ``horizon=None`` picks T with exp(-r T) <= 1e-4."""

    n_paths: int = 200_000
    dt: float = 1.0 / 252.0
    horizon: float | None = None
    seed: int = 42
    refine: int = 1
    chunk_paths: int = 50_000
    backend: str | None = None

    def __post_init__(self):
        _require(isinstance(self.n_paths, (int, np.integer)) and self.n_paths >= 1,
                 "n_paths", "must be an integer >= 1")
        _require(math.isfinite(self.dt) and self.dt > 0, "dt", "must be > 0")
        _require(self.horizon is None or (math.isfinite(self.horizon) and self.horizon > 0),
                 "horizon", "must be > 0")
        _require(0 <= int(self.seed) < 2**64, "seed", "must fit in 64 bits")
        _require(self.refine in (1, 2), "refine", "must be 1 or 2")
        _require(self.chunk_paths >= 1, "chunk_paths", "must be >= 1")

    def resolved_horizon(self, r: float) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        return float(math.ceil(-math.log(1e-4) / r))

    def n_steps(self, r: float) -> int:
        return int(math.ceil(self.resolved_horizon(r) / self.dt - 1e-9))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int
    truncation_bias_bound: float
    unstopped_fraction: float = 0.0

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.std_error


def _transition(problem: ProblemSpec, dt: float) -> tuple[float, float, float]:
    """(a, b, c) of the exact log-price step y' = a y + b + c N."""
    m = problem.model
    if isinstance(m, GbmParams):
        return 1.0, (m.mu - 0.5 * m.sigma**2) * dt, m.sigma * math.sqrt(dt)
    a = math.exp(-m.kappa * dt)
    c = m.eta * math.sqrt(-math.expm1(-2.0 * m.kappa * dt) / (2.0 * m.kappa))
    return a, m.theta * (1.0 - a), c


def _payoff_array(problem: ProblemSpec, price: np.ndarray) -> np.ndarray:
    return np.asarray(problem.utility(problem.nu * price), dtype=float)


def _simulate(problem: ProblemSpec, thresholds: np.ndarray, cfg: McConfig, x0: float):
    """Per-path discounted payoffs for every threshold (one pass, shared paths)."""
    step = _transition(problem, cfg.dt)
    half = _transition(problem, cfg.dt / 2.0)
    n_steps = cfg.n_steps(problem.r)
    T = n_steps * cfg.dt
    barriers = np.log(thresholds)
    fine_dt = cfg.dt / cfg.refine
    payoff = np.zeros((cfg.n_paths, barriers.size))
    tail = np.zeros((cfg.n_paths, barriers.size))
    y0 = math.log(x0)
    for start in range(0, cfg.n_paths, cfg.chunk_paths):
        n = min(cfg.chunk_paths, cfg.n_paths - start)
        hit_idx, hit_y, y_end = _kernels.first_passage(
            y0, barriers, step, half, n_steps, cfg.refine, cfg.seed, start, n, cfg.backend)
        hit = hit_idx >= 0
        disc = np.where(hit, np.exp(-problem.r * fine_dt * np.maximum(hit_idx, 0)), 0.0)
        u_hit = np.where(hit, _payoff_array(problem, np.exp(np.where(hit, hit_y, 0.0))), 0.0)
        payoff[start:start + n] = disc * u_hit
        # a path still running at T would have paid U at a price >= threshold
        # no earlier than T; bound that by the larger of |U| at S_T and at the level
        u_end = np.abs(_payoff_array(problem, np.exp(y_end)))[:, None]
        u_lvl = np.abs(_payoff_array(problem, thresholds))[None, :]
        tail[start:start + n] = np.where(hit, 0.0, np.maximum(u_end, u_lvl))
    return payoff, math.exp(-problem.r * T) * tail


def _estimate(payoff: np.ndarray, tail: np.ndarray) -> McEstimate:
    n = payoff.size
    mean = float(np.mean(payoff))
    se = float(np.std(payoff, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return McEstimate(mean, se, n, float(np.mean(tail)), float(np.mean(tail > 0)))


def mc_strategy_value(problem: ProblemSpec, threshold: float, cfg: McConfig = McConfig(),
                      initial_price: float | None = None) -> McEstimate:
    """Estimate E[exp(-r tau) U(nu X_tau)] for tau = first grid time with price >= threshold."""
    _require(math.isfinite(threshold) and threshold > 0, "threshold", "must be > 0")
    x0 = problem.initial_price if initial_price is None else float(initial_price)
    _require(math.isfinite(x0) and x0 > 0, "initial_price", "must be > 0")
    if x0 >= threshold:
        u = float(problem.payoff(x0))
        return McEstimate(u, 0.0, cfg.n_paths, 0.0)
    payoff, tail = _simulate(problem, np.array([float(threshold)]), cfg, x0)
    return _estimate(payoff[:, 0], tail[:, 0])


def oracle_threshold_sweep(problem: ProblemSpec, grid, cfg: McConfig = McConfig(),
                           initial_price: float | None = None):
    """MC value of each candidate threshold on common paths; returns (best, table)."""
    grid = np.asarray(grid, dtype=float)
    _require(grid.ndim == 1 and grid.size > 0, "grid", "must be a non-empty 1-D list")
    _require(bool(np.all(grid > 0)) and bool(np.all(np.isfinite(grid))), "grid", "must be finite and > 0")
    _require(bool(np.all(np.diff(grid) > 0)), "grid", "must be strictly increasing")
    x0 = problem.initial_price if initial_price is None else float(initial_price)
    payoff, tail = _simulate(problem, grid, cfg, x0)
    table = [_estimate(payoff[:, j], tail[:, j]) for j in range(grid.size)]
    means = np.array([e.mean for e in table])
    best = float(grid[int(np.argmax(means))])  # first max, i.e. the smaller threshold
    return best, table


def increasing_along_grid(table, k: float = 0.0) -> bool:
    """True if MC means never drop by more than k pooled SEs along the grid."""
    for a, b in zip(table, table[1:]):
        if b.mean < a.mean - k * math.hypot(a.std_error, b.std_error):
            return False
    return True


# ----------------------------------------------------------------------- analytic checks


def _utility_derivs(problem: ProblemSpec, v: np.ndarray, in_log: bool):
    """Payoff and first two derivatives, in s (GBM) or z = log x (XOU)."""
    u = problem.utility
    nu = problem.nu
    if not in_log:
        s = v
        if u.kind is UtilityKind.EXPONENTIAL:
            g = u.gamma * nu
            e = np.exp(-g * s)
            return -np.expm1(-g * s), g * e, -g * g * e
        if u.kind is UtilityKind.LOG:
            return np.log(nu * s), 1.0 / s, -1.0 / s**2
        p = u.p
        return (nu * s) ** p / p, nu**p * s ** (p - 1), (p - 1) * nu**p * s ** (p - 2)
    z = v
    if u.kind is UtilityKind.EXPONENTIAL:
        x = u.gamma * nu * np.exp(z)
        e = np.exp(-x)
        return -np.expm1(-x), x * e, (x - x * x) * e
    if u.kind is UtilityKind.LOG:
        return z + math.log(nu), np.ones_like(z), np.zeros_like(z)
    p = u.p
    w = nu**p * np.exp(p * z)
    return w / p, w, p * w


def _generator_terms(solution, v, f0, f1, f2):
    """The three terms of (L - r) f; their sum is the residual."""
    problem = solution.problem
    m, r = problem.model, problem.r
    if isinstance(m, GbmParams):
        return 0.5 * m.sigma**2 * v**2 * f2, m.mu * v * f1, -r * f0
    m: XouParams
    return 0.5 * m.eta**2 * f2, m.kappa * (m.theta - v) * f1, -r * f0


def _continuation_derivs(solution, v):
    if isinstance(solution, GbmSolution):
        return solution.continuation_derivatives(v)
    return tuple(solution.continuation_in_z(v, k) for k in range(3))


@dataclass
class VIReport:
    prices: np.ndarray
    stopping: np.ndarray
    generator: np.ndarray
    gap: np.ndarray
    tol: float
    max_violation: float
    sign_pattern_ok: bool
    dominance_ok: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol and self.sign_pattern_ok and self.dominance_ok


def vi_residual_grid(solution, grid, tol: float = DEFAULT_TOL) -> VIReport:
    """max{(L - r)V, U - V} on a price grid, both terms normalized.

    The generator residual is divided by the sum of the magnitudes of its
    terms and the gap by max(|U|, |V|), so ``tol`` is a relative tolerance.
    """
    problem = solution.problem
    prices = np.asarray(grid, dtype=float)
    _require(prices.ndim == 1 and bool(np.all(prices > 0)), "grid", "prices must be > 0")
    strategy = solution.strategy
    if strategy.kind is StrategyKind.WAIT_FOREVER:
        raise ValueError("no finite value function in the wait-forever regime")
    in_log = isinstance(solution, XouSolution)
    v = np.log(prices) if in_log else prices

    if strategy.kind is StrategyKind.SELL_NOW:
        stopping = np.ones(prices.size, bool)
    else:
        stopping = prices >= strategy.level
    u0, u1, u2 = _utility_derivs(problem, v, in_log)
    f0, f1, f2 = (np.array(t, dtype=float, copy=True) for t in (u0, u1, u2))
    cont = ~stopping
    if np.any(cont):
        c0, c1, c2 = _continuation_derivs(solution, v[cont])
        f0[cont], f1[cont], f2[cont] = c0, c1, c2

    terms = _generator_terms(solution, v, f0, f1, f2)
    scale = sum(np.abs(t) for t in terms)
    gen = np.where(scale > 0, sum(terms) / np.where(scale > 0, scale, 1.0), 0.0)
    # the value itself, evaluated through the public entry points
    value = eval_value_xou(solution, prices) if in_log else eval_value_gbm(solution, prices)
    value = np.asarray(value, dtype=float)
    payoff = np.asarray(problem.payoff(prices), dtype=float)
    denom = np.maximum(np.maximum(np.abs(payoff), np.abs(value)), np.finfo(float).tiny)
    gap = (payoff - value) / denom

    viol = np.maximum(gen, gap)
    max_violation = float(np.max(viol))
    # continuation: generator vanishes; stopping: V = U exactly
    pattern = np.where(stopping, np.abs(gap) <= tol, np.abs(gen) <= tol)
    notes = []
    if not np.all(pattern):
        notes.append(f"sign pattern broken at prices {prices[~pattern][:5].tolist()}")
    dominance = bool(np.all(value >= payoff - tol * denom)) and bool(np.all(value[stopping] == payoff[stopping]))
    if not dominance:
        notes.append("value does not dominate the payoff")
    return VIReport(prices, stopping, gen, gap, tol, max_violation, bool(np.all(pattern)), dominance, notes)


@dataclass(frozen=True)
class PastingReport:
    threshold: float
    value_gap: float
    derivative_gap: float
    tol: float = PASTING_TOL

    @property
    def passed(self) -> bool:
        return self.value_gap <= self.tol and self.derivative_gap <= self.tol


def smooth_pasting_audit(solution, tol: float = PASTING_TOL) -> PastingReport:
    """Relative value and slope mismatch of the two branches at the threshold.

    XOU slopes are taken in z = log x; the chain-rule factor 1/x is common to
    both branches and drops out of the relative gap.
    """
    if solution.strategy.kind is not StrategyKind.THRESHOLD:
        raise ValueError("smooth pasting needs a threshold strategy")
    level = solution.strategy.level
    in_log = isinstance(solution, XouSolution)
    v = np.array([solution.b if in_log else level])
    u0, u1, _ = _utility_derivs(solution.problem, v, in_log)
    c0, c1, _ = _continuation_derivs(solution, v)
    rel = lambda a, b: float(abs(a - b) / max(abs(b), np.finfo(float).tiny))  # noqa: E731
    return PastingReport(level, rel(c0[0], u0[0]), rel(c1[0], u1[0]), tol)


def nonconcavity_witness(solution, prices, rel_step: float = 1e-2):
    """First continuation-region price where V has a positive second difference."""
    if solution.strategy.kind is not StrategyKind.THRESHOLD:
        return None
    evaluate = eval_value_xou if isinstance(solution, XouSolution) else eval_value_gbm
    level = solution.strategy.level
    for x in np.asarray(prices, dtype=float):
        h = rel_step * x
        if x + h >= level:
            continue
        v = np.asarray(evaluate(solution, np.array([x - h, x, x + h])), dtype=float)
        d2 = v[0] - 2.0 * v[1] + v[2]
        if d2 > 64 * np.finfo(float).eps * np.max(np.abs(v)):
            return float(x)
    return None
