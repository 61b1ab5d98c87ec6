import math

import mpmath as mp
import numpy as np
import pytest
from conftest import CASES, XOU, R

from optsale.model import ProblemSpec, UtilityKind, UtilitySpec
from optsale.special import eval_F
from optsale.xou import (
    bracket_lower,
    eval_ce_xou,
    eval_value_xou,
    h_function,
    solve_xou,
    threshold_equation,
)


def oracle_log_threshold(problem, guess):
    """argmax_b U(nu e^b) / F(b), with F from mpmath parabolic cylinder functions.

    E_z[exp(-r tau_b)] = F(z) / F(b), so this is the best 'sell at e^b' rule.
    """
    mp.mp.dps = 30
    m, u = problem.model, problem.utility
    p = u.p if u.kind is UtilityKind.POWER else 1.0
    a = mp.mpf(problem.r) / m.kappa
    c = mp.sqrt(2 * mp.mpf(m.kappa)) / (p * m.eta)
    theta = p * m.theta

    def logF(w):
        d = w - theta
        return mp.loggamma(a) + c**2 * d**2 / 4 + mp.log(mp.pcfd(-a, -c * d))

    def objective(b):
        x = problem.nu * mp.exp(b)
        if u.kind is UtilityKind.EXPONENTIAL:
            lu = mp.log(1 - mp.exp(-u.gamma * x))
        elif u.kind is UtilityKind.LOG:
            lu = mp.log(mp.log(x))
        else:
            lu = p * mp.log(x) - mp.log(p)
        return lu - logF(p * b)

    return float(mp.findroot(lambda b: mp.diff(objective, b), guess))


# accurate values; see the project notes for the comparison with older published figures
EXPECTED = {"xou_exp": 1.1266624, "xou_log": 1.2285406, "xou_power": 1.0639563}


@pytest.mark.parametrize("case", ["xou_exp", "xou_log", "xou_power"])
def test_threshold_matches_oracle(case):
    sol = solve_xou(CASES[case])
    assert sol.b == pytest.approx(oracle_log_threshold(CASES[case], sol.b + 0.01), abs=1e-9)
    assert sol.b == pytest.approx(EXPECTED[case], abs=5e-7)
    assert sol.threshold == pytest.approx(math.exp(sol.b), rel=1e-15)


def test_power_threshold_in_powered_variable():
    sol = solve_xou(CASES["xou_power"])
    w = 0.3 * sol.b
    assert w == pytest.approx(0.3191869, abs=5e-7)
    assert math.exp(w) == pytest.approx(1.3760085, abs=5e-7)


def test_equation_sign_change_at_root():
    for case in ("xou_exp", "xou_log", "xou_power"):
        problem = CASES[case]
        sol = solve_xou(problem)
        eq = threshold_equation(problem)
        root = sol.b * (problem.utility.p if problem.utility.kind is UtilityKind.POWER else 1.0)
        assert eq(root - 1e-4) > 0 > eq(root + 1e-4)
        assert abs(eq(root)) < 1e-12


def test_brackets_below_threshold():
    for case in ("xou_exp", "xou_log"):
        assert bracket_lower(CASES[case]) < solve_xou(CASES[case]).b
    sol = solve_xou(CASES["xou_power"])
    assert bracket_lower(CASES["xou_power"]) < 0.3 * sol.b
    zeta = bracket_lower(CASES["xou_exp"])
    assert h_function(CASES["xou_exp"], zeta) == pytest.approx(0.0, abs=1e-12)
    assert zeta == pytest.approx(0.9245008, abs=5e-7)
    # ell = (kappa theta - r log nu) / (kappa + r)
    assert bracket_lower(CASES["xou_log"].with_(nu=2.0)) == pytest.approx((0.6 - R * math.log(2)) / 0.62)


def test_exponential_scaling_law():
    base = solve_xou(CASES["xou_exp"]).b
    for c in (0.5, 2.0, 4.0):
        p = CASES["xou_exp"].with_(utility=UtilitySpec.exponential(0.5 * c), nu=1.0 / c)
        assert solve_xou(p).b == pytest.approx(base, abs=1e-10)


def test_quantity_dependence():
    nus = [0.5, 1.0, 2.0, 5.0]
    power = [solve_xou(CASES["xou_power"].with_(nu=n)).b for n in nus]
    np.testing.assert_allclose(power, power[0], rtol=0, atol=1e-12)
    log = [solve_xou(CASES["xou_log"].with_(nu=n)).threshold for n in nus]
    assert np.all(np.diff(log) < 0)
    cash = np.array(log) * nus
    assert np.all(np.diff(cash) > 0)
    exp = [solve_xou(CASES["xou_exp"].with_(nu=n)).threshold for n in nus]
    assert np.all(np.diff(exp) < 0)


def test_value_function_properties():
    for case in ("xou_exp", "xou_log", "xou_power"):
        sol = solve_xou(CASES[case])
        x = np.linspace(0.3, 2 * sol.threshold, 120)
        v = eval_value_xou(sol, x)
        u = sol.problem.payoff(x)
        assert np.all(v >= u - 1e-14)
        stop = x >= sol.threshold
        assert np.array_equal(v[stop], u[stop])
        assert np.all(np.diff(v) > 0)


def test_continuation_is_scaled_F():
    sol = solve_xou(CASES["xou_exp"])
    assert sol.continuation_value(1.5) == pytest.approx(sol.coefficient * eval_F(sol.eigen, math.log(1.5)))


def test_ce_and_premium():
    for case in ("xou_exp", "xou_log", "xou_power"):
        sol = solve_xou(CASES[case])
        x = np.array([1.0, 2.0, sol.threshold * 1.01])
        ce, prem = eval_ce_xou(sol, x)
        np.testing.assert_allclose(sol.utility(ce), eval_value_xou(sol, x), rtol=1e-12)
        assert np.all(prem >= 0) and prem[-1] == 0.0


def test_power_premium_linear_in_quantity():
    x = np.array([1.0, 2.0])
    base = eval_ce_xou(solve_xou(CASES["xou_power"]), x)[1]
    for nu in (2.0, 3.5):
        prem = eval_ce_xou(solve_xou(CASES["xou_power"].with_(nu=nu)), x)[1]
        np.testing.assert_allclose(prem, nu * base, rtol=1e-10)


def test_other_parameters_solve():
    for kappa, theta, eta, r in ((0.2, 0.0, 0.5, 0.05), (3.0, 2.0, 0.1, 0.01), (1.0, -1.0, 1.0, 0.1)):
        from optsale.model import XouParams
        for u in (UtilitySpec.exponential(1.0), UtilitySpec.log(), UtilitySpec.power(0.7)):
            p = ProblemSpec(XouParams(kappa, theta, eta), u, r, nu=1.5)
            sol = solve_xou(p)
            assert sol.coefficient > 0 and math.isfinite(sol.b)


def test_rejects_gbm():
    with pytest.raises(TypeError):
        solve_xou(CASES["gbm_exp"])
    with pytest.raises(TypeError):
        bracket_lower(CASES["gbm_exp"])
    assert XOU.kappa == 0.6
