"""Property-based checks over random parameters."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from optsale import _kernels as K
from optsale.gbm import compute_alpha, eval_value_gbm, solve_gbm
from optsale.model import GbmParams, ProblemSpec, UtilitySpec, XouParams
from optsale.special import OuEigenParams, eval_F, eval_G
from optsale.verify import smooth_pasting_audit, vi_residual_grid
from optsale.xou import eval_value_xou, solve_xou, threshold_equation

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

kappas = st.floats(0.1, 3.0)
thetas = st.floats(-1.0, 2.0)
etas = st.floats(0.05, 1.0)
rates = st.floats(0.005, 0.1)
nus = st.floats(0.2, 5.0)
gammas = st.floats(0.1, 2.0)
powers = st.floats(0.1, 1.0)


@st.composite
def xou_problems(draw):
    model = XouParams(draw(kappas), draw(thetas), draw(etas))
    kind = draw(st.sampled_from(["exponential", "log", "power"]))
    if kind == "exponential":
        u = UtilitySpec.exponential(draw(gammas))
    elif kind == "power":
        u = UtilitySpec.power(draw(powers))
    else:
        u = UtilitySpec.log()
    return ProblemSpec(model, u, draw(rates), nu=draw(nus))


@SETTINGS
@given(kappas, thetas, etas, rates, st.floats(-1.5, 1.5))
def test_eigenfunctions_solve_ode(kappa, theta, eta, r, dz):
    p = OuEigenParams(kappa, theta, eta, r)
    z = theta + dz * p.length * 3
    for ev in (eval_F, eval_G):
        f0, f1, f2 = (ev(p, z, k) for k in range(3))
        terms = (0.5 * eta**2 * f2, kappa * (theta - z) * f1, -r * f0)
        assert abs(sum(terms)) <= 1e-9 * sum(abs(t) for t in terms)
        assert f0 > 0 and f2 > 0
    assert eval_F(p, z, 1) > 0 > eval_G(p, z, 1)
    assert math.isclose(eval_F(p, z), eval_G(p, 2 * theta - z), rel_tol=1e-13)


@SETTINGS
@given(xou_problems())
def test_xou_solution_is_consistent(problem):
    sol = solve_xou(problem)
    p = problem.utility.p if problem.utility.kind.value == "power" else 1.0
    eq = threshold_equation(problem)
    assert abs(eq(p * sol.b)) < 1e-9
    assert smooth_pasting_audit(sol).passed
    x = np.exp(np.linspace(sol.b - 4 * sol.eigen.length / p, sol.b + 1.0, 40))
    rep = vi_residual_grid(sol, x)
    assert rep.passed, rep.notes
    v = eval_value_xou(sol, x)
    assert np.all(np.diff(v) > 0)


@SETTINGS
@given(kappas, thetas, etas, rates, powers, nus, nus)
def test_xou_power_level_ignores_quantity(kappa, theta, eta, r, p, nu1, nu2):
    base = ProblemSpec(XouParams(kappa, theta, eta), UtilitySpec.power(p), r, nu=nu1)
    assert math.isclose(solve_xou(base).b, solve_xou(base.with_(nu=nu2)).b, rel_tol=0, abs_tol=1e-10)


@SETTINGS
@given(st.floats(0.01, 0.3), st.floats(0.05, 0.8), rates, gammas, nus, st.floats(0.2, 5.0))
def test_gbm_exponential_threshold(mu, sigma, r, gamma, nu, c):
    problem = ProblemSpec(GbmParams(mu, sigma), UtilitySpec.exponential(gamma), r, nu=nu)
    sol = solve_gbm(problem)
    if r >= mu:
        assert sol.strategy.kind.value == "sell_now"
        return
    x = gamma * nu * sol.threshold
    alpha = compute_alpha(problem.model, r)
    assert abs(alpha * math.expm1(x) - x) <= 1e-12 * max(1.0, x)
    scaled = solve_gbm(problem.with_(utility=UtilitySpec.exponential(gamma * c), nu=nu / c))
    assert math.isclose(scaled.threshold, sol.threshold, rel_tol=1e-10)
    s = np.linspace(0.01, 2 * sol.threshold, 50)
    assert np.all(eval_value_gbm(sol, s) >= problem.payoff(s) - 1e-14)


@SETTINGS
@given(st.floats(-0.1, 0.3), st.floats(0.05, 0.8), rates, powers)
def test_gbm_power_classification(mu, sigma, r, p):
    sol = solve_gbm(ProblemSpec(GbmParams(mu, sigma), UtilitySpec.power(p), r))
    mu_tilde = p * mu + 0.5 * p * (p - 1) * sigma**2
    assert sol.strategy.kind.value == ("sell_now" if mu_tilde <= r else "wait_forever")


@SETTINGS
@given(st.sampled_from([UtilitySpec.exponential(0.3), UtilitySpec.log(), UtilitySpec.power(0.4)]),
       st.floats(1e-3, 20.0))  # 1 - exp(-gamma w) rounds to 1 for large w
def test_utility_inverse(u, w):
    assert math.isclose(float(u.inverse(u(w))), w, rel_tol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 19))
def test_any_path_partition_reproduces(seed, cut):
    step = (1.0, 0.0001, 0.0126)
    full = K.first_passage(0.0, [0.05, 0.1], step, step, 400, 1, seed, 0, 20)
    parts = [K.first_passage(0.0, [0.05, 0.1], step, step, 400, 1, seed, s, n) for s, n in ((0, cut), (cut, 20 - cut))]
    for i in range(3):
        assert np.array_equal(full[i], np.concatenate([q[i] for q in parts]), equal_nan=True)
