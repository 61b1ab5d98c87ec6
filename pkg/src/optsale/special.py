"""Increasing/decreasing eigenfunctions of the OU generator.

F and G solve (eta^2/2) f'' + kappa (theta - z) f' = r f and are given by

    F(z) = int_0^inf u^(a-1) exp(c (z - theta) u - u^2 / 2) du
    G(z) = int_0^inf u^(a-1) exp(c (theta - z) u - u^2 / 2) du

with a = r / kappa and c = sqrt(2 kappa) / eta.  Up to the constant Gamma(a)
they equal exp(c^2 (z-theta)^2 / 4) D_{-a}(-/+ c (z - theta)) with D the
parabolic cylinder (Weber) function; that form is only used by the tests.

Derivatives are taken under the integral sign, so the k-th derivative of F
is c^k times the moment integral with u^(a-1+k).  Everything is evaluated
on a log scale: the exponent is shifted by its maximum over u before
integrating, and callers that only need ratios (root-finding) never leave
the scaled representation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .model import NumericalError, XouParams, _require


@dataclass(frozen=True)
class OuEigenParams:
    kappa: float
    theta: float
    eta: float
    r: float

    def __post_init__(self):
        XouParams(self.kappa, self.theta, self.eta)
        _require(math.isfinite(self.r) and self.r > 0, "r", "must be > 0")

    @classmethod
    def from_model(cls, model: XouParams, r: float) -> "OuEigenParams":
        return cls(model.kappa, model.theta, model.eta, r)

    @property
    def exponent(self) -> float:
        return self.r / self.kappa

    @property
    def scale(self) -> float:
        return math.sqrt(2.0 * self.kappa) / self.eta

    @property
    def length(self) -> float:
        """Stationary standard deviation of the log-price, eta / sqrt(2 kappa)."""
        return self.eta / math.sqrt(2.0 * self.kappa)

    def generator(self, f0, f1, f2, z):
        """(L^Z - r) f given f and its first two derivatives at z."""
        return 0.5 * self.eta**2 * f2 + self.kappa * (self.theta - z) * f1 - self.r * f0


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-300
    max_refinements: int = 30

    def __post_init__(self):
        _require(0 < self.rel_tol < 1, "rel_tol", "must lie in (0, 1)")
        _require(self.abs_tol >= 0, "abs_tol", "must be >= 0")
        _require(self.max_refinements >= 1, "max_refinements", "must be >= 1")


DEFAULT_QUADRATURE = QuadratureConfig()


def _quad(f, lo, hi, cfg: QuadratureConfig, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info, *msg = integrate.quad(
            f, lo, hi, epsabs=cfg.abs_tol, epsrel=cfg.rel_tol,
            limit=cfg.max_refinements, points=points, full_output=1,
        )
    # QUADPACK flags roundoff (ier=2) when epsrel sits near machine precision;
    # accept if the error estimate is still within a small multiple of target.
    if not math.isfinite(val) or err > max(10.0 * cfg.rel_tol * abs(val), cfg.abs_tol):
        raise NumericalError("quadrature did not converge", estimate=val, error=err,
                             interval=(lo, hi), subintervals=info.get("last"))
    return val, err


@lru_cache(maxsize=8192)
def _scaled_moment(a: float, x: float, k: int, cfg: QuadratureConfig) -> tuple[float, float]:
    """int_0^inf u^(a-1+k) exp(x u - u^2/2) du  as  (mantissa, log_scale)."""
    shift = 0.5 * x * x if x > 0 else 0.0
    q = a - 1.0 + k

    # (0, 1): u = t^(1/a) turns u^(a-1) du into dt / a
    inv_a = 1.0 / a

    def head(t):
        u = t**inv_a
        return u**k * math.exp(x * u - 0.5 * u * u - shift)

    lower, _ = _quad(head, 0.0, 1.0, cfg)
    lower *= inv_a

    # (1, inf): truncate where the integrand drops below rel_tol * peak
    def tail_log(u):
        return q * math.log(u) + x * u - 0.5 * u * u - shift

    u_peak = max(1.0, 0.5 * (x + math.sqrt(x * x + 4.0 * max(q, 0.0))))
    cutoff = tail_log(u_peak) + math.log(cfg.rel_tol) - 8.0
    hi = u_peak + math.sqrt(2.0 * max(-math.log(cfg.rel_tol), 1.0))
    while tail_log(hi) > cutoff:
        hi += 1.0 + 0.25 * (hi - u_peak)
    points = [u_peak] if 1.0 < u_peak < hi else None
    upper, _ = _quad(lambda u: math.exp(tail_log(u)), 1.0, hi, cfg, points=points)
    return lower + upper, shift


def _check_order(order: int) -> None:
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order!r}")


def scaled_eval(params: OuEigenParams, z: float, order: int, which: str = "F",
                cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> tuple[float, float]:
    """k-th derivative of F (or G) at z as ``(mantissa, log_scale)``.

    The true value is ``mantissa * exp(log_scale)``; derivatives of the same
    function at the same z share the log scale, so ratios are overflow free.
    """
    _check_order(order)
    x = params.scale * (float(z) - params.theta)
    sign = 1.0
    if which == "G":
        x = -x
        sign = (-1.0) ** order
    elif which != "F":
        raise ValueError("which must be 'F' or 'G'")
    m, shift = _scaled_moment(params.exponent, x, order, cfg)
    return sign * params.scale**order * m, shift


def _evaluate(params, z, order, which, cfg):
    def one(zz):
        m, shift = scaled_eval(params, zz, order, which, cfg)
        if shift > 700.0:
            val = m * math.exp(shift) if math.log(abs(m)) + shift < 709.0 else math.inf
            if math.isinf(val):
                raise NumericalError("eigenfunction overflows double precision; use log_eval",
                                     z=zz, log_value=math.log(abs(m)) + shift)
            return val
        return m * math.exp(shift)

    if np.ndim(z) == 0:
        return one(float(z))
    return np.array([one(float(zz)) for zz in np.ravel(z)]).reshape(np.shape(z))


def eval_F(params: OuEigenParams, z, order: int = 0, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Increasing eigenfunction F or its first/second z-derivative."""
    return _evaluate(params, z, order, "F", cfg)


def eval_G(params: OuEigenParams, z, order: int = 0, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Decreasing eigenfunction G or its first/second z-derivative."""
    return _evaluate(params, z, order, "G", cfg)


def log_eval_F(params: OuEigenParams, z: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    m, shift = scaled_eval(params, z, 0, "F", cfg)
    return math.log(m) + shift


def log_derivative_F(params: OuEigenParams, z: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """F'(z) / F(z)."""
    f0, _ = scaled_eval(params, z, 0, "F", cfg)
    f1, _ = scaled_eval(params, z, 1, "F", cfg)
    return f1 / f0


def wronskian(params: OuEigenParams, z: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """F'(z) G(z) - F(z) G'(z)."""
    f0 = eval_F(params, z, 0, cfg)
    f1 = eval_F(params, z, 1, cfg)
    g0 = eval_G(params, z, 0, cfg)
    g1 = eval_G(params, z, 1, cfg)
    return f1 * g0 - f0 * g1
