"""Model, utility and problem types plus regime classification.

Everything here is an immutable value validated at construction, so the
solvers downstream can assume their invariants hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np


class ValidationError(ValueError):
    """Invalid model/problem parameter. ``field`` names the offending input."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalError(RuntimeError):
    """A root-finder or quadrature failed to meet its tolerance."""

    def __init__(self, message: str, **diagnostics):
        if diagnostics:
            detail = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)
        self.diagnostics = diagnostics


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ValidationError(field, message)


def _finite(x: float) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x)


@dataclass(frozen=True)
class GbmParams:
    mu: float
    sigma: float

    def __post_init__(self):
        _require(_finite(self.mu), "mu", "must be finite")
        _require(_finite(self.sigma) and self.sigma > 0, "sigma", "must be > 0")


@dataclass(frozen=True)
class XouParams:
    """Log-price ``Z`` is OU: dZ = kappa (theta - Z) dt + eta dB, price X = exp(Z)."""

    kappa: float
    theta: float
    eta: float

    def __post_init__(self):
        _require(_finite(self.kappa) and self.kappa > 0, "kappa", "must be > 0")
        _require(_finite(self.theta), "theta", "must be finite")
        _require(_finite(self.eta) and self.eta > 0, "eta", "must be > 0")


ModelParams = Union[GbmParams, XouParams]


class UtilityKind(str, Enum):
    EXPONENTIAL = "exponential"
    LOG = "log"
    POWER = "power"


@dataclass(frozen=True)
class UtilitySpec:
    """Exponential ``1 - exp(-gamma w)``, log ``log w`` or power ``w**p / p``."""

    kind: UtilityKind
    gamma: float | None = None
    p: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", UtilityKind(self.kind))
        if self.kind is UtilityKind.EXPONENTIAL:
            _require(self.gamma is not None and _finite(self.gamma) and self.gamma > 0,
                     "gamma", "must be > 0")
        elif self.kind is UtilityKind.POWER:
            _require(self.p is not None and _finite(self.p) and 0 < self.p <= 1,
                     "p", "must lie in (0, 1]")

    @classmethod
    def exponential(cls, gamma: float) -> "UtilitySpec":
        return cls(UtilityKind.EXPONENTIAL, gamma=gamma)

    @classmethod
    def log(cls) -> "UtilitySpec":
        return cls(UtilityKind.LOG)

    @classmethod
    def power(cls, p: float) -> "UtilitySpec":
        return cls(UtilityKind.POWER, p=p)

    def __call__(self, w):
        """Utility of wealth ``w`` (array friendly)."""
        w = np.asarray(w, dtype=float)
        if self.kind is UtilityKind.EXPONENTIAL:
            out = -np.expm1(-self.gamma * w)
        elif self.kind is UtilityKind.LOG:
            if np.any(w <= 0):
                raise ValidationError("price", "log utility needs positive wealth")
            out = np.log(w)
        else:
            out = w**self.p / self.p
        return out[()] if out.ndim == 0 else out

    def inverse(self, u):
        """Wealth whose utility is ``u``."""
        u = np.asarray(u, dtype=float)
        if self.kind is UtilityKind.EXPONENTIAL:
            if np.any(u >= 1):
                raise NumericalError("exponential utility value must be < 1", max_value=float(np.max(u)))
            out = -np.log1p(-u) / self.gamma
        elif self.kind is UtilityKind.LOG:
            out = np.exp(u)
        else:
            out = (self.p * u) ** (1.0 / self.p)
        return out[()] if out.ndim == 0 else out

    @property
    def label(self) -> str:
        if self.kind is UtilityKind.EXPONENTIAL:
            return f"exponential(gamma={self.gamma:g})"
        if self.kind is UtilityKind.POWER:
            return f"power(p={self.p:g})"
        return "log"


@dataclass(frozen=True)
class ProblemSpec:
    model: ModelParams
    utility: UtilitySpec
    r: float
    nu: float = 1.0
    initial_price: float = 1.0

    def __post_init__(self):
        _require(isinstance(self.model, (GbmParams, XouParams)), "model", "must be GBM or XOU params")
        _require(isinstance(self.utility, UtilitySpec), "utility", "must be a UtilitySpec")
        _require(_finite(self.r) and self.r > 0, "r", "must be > 0")
        _require(_finite(self.nu) and self.nu > 0, "nu", "must be > 0")
        _require(_finite(self.initial_price) and self.initial_price > 0,
                 "initial_price", "must be > 0")

    @property
    def is_gbm(self) -> bool:
        return isinstance(self.model, GbmParams)

    def payoff(self, price):
        """Utility of selling all units at ``price``."""
        return self.utility(self.nu * np.asarray(price, dtype=float))

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


class StrategyKind(str, Enum):
    SELL_NOW = "sell_now"
    WAIT_FOREVER = "wait_forever"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class Strategy:
    """Optimal selling rule. ``level`` is the price threshold (None until solved)."""

    kind: StrategyKind
    level: float | None = None

    def __post_init__(self):
        if self.kind is StrategyKind.THRESHOLD and self.level is not None:
            _require(_finite(self.level) and self.level > 0, "level", "threshold must be finite and > 0")

    @classmethod
    def sell_now(cls) -> "Strategy":
        return cls(StrategyKind.SELL_NOW)

    @classmethod
    def wait_forever(cls) -> "Strategy":
        return cls(StrategyKind.WAIT_FOREVER)

    @classmethod
    def threshold(cls, level: float | None = None) -> "Strategy":
        return cls(StrategyKind.THRESHOLD, level)


class _Unbounded:
    """Sentinel for an infinite value/certainty equivalent (wait-forever regime)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    def __reduce__(self):
        return (_Unbounded, ())


UNBOUNDED = _Unbounded()


def reduced_gbm_drift(gbm: GbmParams, p: float) -> float:
    """Drift of S**p when S is a GBM."""
    return p * gbm.mu + 0.5 * p * (p - 1.0) * gbm.sigma**2


def power_reduced_params(problem: ProblemSpec) -> ModelParams:
    """Parameters of the powered price process X**p (S**p for GBM)."""
    if problem.utility.kind is not UtilityKind.POWER:
        raise TypeError("power_reduced_params needs a power utility")
    p = problem.utility.p
    m = problem.model
    if isinstance(m, GbmParams):
        return GbmParams(mu=reduced_gbm_drift(m, p), sigma=p * m.sigma)
    return XouParams(kappa=m.kappa, theta=p * m.theta, eta=p * m.eta)


def classify_strategy(problem: ProblemSpec) -> Strategy:
    """Regime of the optimal rule; non-trivial cases come back as an unsolved threshold."""
    kind = problem.utility.kind
    if problem.is_gbm:
        if kind is UtilityKind.EXPONENTIAL:
            return Strategy.sell_now() if problem.r >= problem.model.mu else Strategy.threshold()
        if kind is UtilityKind.POWER:
            mu_tilde = reduced_gbm_drift(problem.model, problem.utility.p)
            return Strategy.sell_now() if mu_tilde <= problem.r else Strategy.wait_forever()
    return Strategy.threshold()
