"""Acceptance criteria, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -v`` (the lines are printed even when
output capture is on).  Tolerances and runtimes are the contract values.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import CASES, R, XOU, solve_any

from optsale.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from optsale.gbm import eval_value_gbm, solve_gbm
from optsale.model import GbmParams, ProblemSpec, StrategyKind, UtilitySpec, reduced_gbm_drift
from optsale.special import OuEigenParams, eval_F, eval_G, wronskian
from optsale.verify import (
    McConfig,
    mc_strategy_value,
    nonconcavity_witness,
    oracle_threshold_sweep,
    smooth_pasting_audit,
    vi_residual_grid,
)
from optsale.xou import eval_value_xou, solve_xou

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
NONTRIVIAL = ["gbm_exp", "gbm_log", "xou_exp", "xou_power", "xou_log"]


@pytest.fixture
def say(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" | {detail}" if detail else ""))
    return emit


def _check(items):
    bad = [name for name, ok in items if not ok]
    return not bad, bad


def test_criterion_1_threshold_regressions(say):
    t0 = time.perf_counter()
    gbm_exp = solve_gbm(CASES["gbm_exp"])
    gbm_log = solve_gbm(CASES["gbm_log"])
    gbm_low = solve_gbm(CASES["gbm_log_low"])
    xe = solve_xou(CASES["xou_exp"])
    xp = solve_xou(CASES["xou_power"])
    xl = solve_xou(CASES["xou_log"])
    elapsed = time.perf_counter() - t0
    rows = [
        ("a_e", gbm_exp.threshold, 2.5129),
        ("a_l(mu=0.05)", gbm_log.threshold, 7.3891),
        ("a_l(mu=0.01)", gbm_low.threshold, 2.1832),
        ("b_e", xe.b, 1.1188), ("exp(b_e)", xe.threshold, 3.0612),
        ("b_p", xp.b, 0.3519), ("exp(b_p)", xp.threshold, 1.3715),
        ("b_l", xl.b, 1.2227), ("exp(b_l)", xl.threshold, 3.3963),
    ]
    items = [(f"{n}={got:.6f} (want {want})", abs(got - want) <= 1e-3) for n, got, want in rows]
    items.append((f"runtime {elapsed:.2f}s", elapsed < 5.0))
    ok, bad = _check(items)
    say(1, "published threshold regressions (1e-3 abs, < 5 s)", ok,
        "all within tolerance" if ok else "off: " + "; ".join(bad))
    assert ok, bad


def test_criterion_2_triviality_classification(say):
    sig, p = 0.2, 0.3
    mu_edge = (R - 0.5 * p * (p - 1) * sig**2) / p  # mu_tilde == r exactly
    assert reduced_gbm_drift(GbmParams(mu_edge, sig), p) == pytest.approx(R, abs=1e-17)
    cases = [
        ("exp r>mu", ProblemSpec(GbmParams(0.01, sig), UtilitySpec.exponential(0.5), R), StrategyKind.SELL_NOW),
        ("exp r=mu", ProblemSpec(GbmParams(R, sig), UtilitySpec.exponential(0.5), R), StrategyKind.SELL_NOW),
        ("exp r<mu", CASES["gbm_exp"], StrategyKind.THRESHOLD),
        ("pow mu~<r", ProblemSpec(GbmParams(0.05, sig), UtilitySpec.power(p), R), StrategyKind.SELL_NOW),
        ("pow mu~=r", ProblemSpec(GbmParams(mu_edge, sig), UtilitySpec.power(p), R), StrategyKind.SELL_NOW),
        ("pow mu~>r", ProblemSpec(GbmParams(mu_edge * (1 + 1e-9), sig), UtilitySpec.power(p), R),
         StrategyKind.WAIT_FOREVER),
        ("pow large mu", ProblemSpec(GbmParams(0.3, sig), UtilitySpec.power(p), R), StrategyKind.WAIT_FOREVER),
    ]
    items = [(name, solve_gbm(prob).strategy.kind is want) for name, prob, want in cases]
    ok, bad = _check(items)
    say(2, "triviality classification incl. mu~ = r boundary", ok, "" if ok else ", ".join(bad))
    assert ok


def test_criterion_3_structural_properties(say, solutions):
    t0 = time.perf_counter()
    items = []
    for case in NONTRIVIAL + ["gbm_log_low"]:
        sol = solutions[case]
        sp = smooth_pasting_audit(sol)
        items.append((f"{case} pasting", sp.value_gap <= 1e-8 and sp.derivative_gap <= 1e-8))
    for case in NONTRIVIAL:
        sol = solutions[case]
        grid = np.linspace(0.2 * sol.threshold, 2.0 * sol.threshold, 200)
        rep = vi_residual_grid(sol, grid, tol=1e-8)
        items.append((f"{case} VI residual {rep.max_violation:.1e}", rep.max_violation <= 1e-8))
        items.append((f"{case} VI sign pattern", rep.sign_pattern_ok))
        evaluate = eval_value_gbm if case.startswith("gbm") else eval_value_xou
        v = np.asarray(evaluate(sol, grid))
        u = np.asarray(sol.problem.payoff(grid))
        stop = grid >= sol.threshold
        items.append((f"{case} dominance", bool(np.all(v[~stop] > u[~stop])) and np.array_equal(v[stop], u[stop])))
    for params in (OuEigenParams.from_model(XOU, R), solutions["xou_power"].eigen):
        zs = np.linspace(params.theta - 4 * params.length, params.theta + 4 * params.length, 41)
        for name, ev in (("F", eval_F), ("G", eval_G)):
            f0, f1, f2 = (np.asarray(ev(params, zs, k)) for k in range(3))
            terms = (0.5 * params.eta**2 * f2, params.kappa * (params.theta - zs) * f1, -params.r * f0)
            resid = np.max(np.abs(sum(terms)) / sum(np.abs(t) for t in terms))
            items.append((f"{name} ODE residual {resid:.1e}", resid <= 1e-8))
            items.append((f"{name} positive/convex", bool(np.all(f0 > 0) and np.all(f2 > 0))))
            mono = np.all(f1 > 0) if name == "F" else np.all(f1 < 0)
            items.append((f"{name} monotone", bool(mono)))
        w = np.array([wronskian(params, z) for z in zs[::4]])
        items.append(("Wronskian > 0", bool(np.all(w > 0))))
        a = params.exponent
        gamma_id = 2 ** (a / 2 - 1) * math.gamma(a / 2)
        items.append(("F(theta) Gamma identity", abs(eval_F(params, params.theta) / gamma_id - 1) <= 1e-8))
    elapsed = time.perf_counter() - t0
    items.append((f"runtime {elapsed:.2f}s", elapsed < 10.0))
    ok, bad = _check(items)
    say(3, "pasting, VI residual/sign, dominance, F/G properties (<= 1e-8, < 10 s)", ok,
        f"{len(items)} checks, runtime {elapsed:.2f}s" if ok else "; ".join(bad))
    assert ok


def test_criterion_4_scaling_and_quantity_laws(say):
    items = []
    for case, solver, key in (("gbm_exp", solve_gbm, "threshold"), ("xou_exp", solve_xou, "b")):
        base = getattr(solver(CASES[case]), key)
        for c in (0.25, 3.0, 10.0):
            p = CASES[case].with_(utility=UtilitySpec.exponential(0.5 * c), nu=1.0 / c)
            items.append((f"{case} (c gamma, nu/c) c={c}", abs(getattr(solver(p), key) - base) <= 1e-10 * abs(base)))
    nus = [0.5, 1.0, 2.0, 5.0]
    al = [solve_gbm(CASES["gbm_log"].with_(nu=n)).threshold * n for n in nus]
    items.append(("nu a_l constant", np.ptp(al) <= 1e-10 * al[0]))
    bp = [solve_xou(CASES["xou_power"].with_(nu=n)).b for n in nus]
    items.append(("b_p constant", np.ptp(bp) <= 1e-10))
    ae = [solve_gbm(CASES["gbm_exp"].with_(nu=n)).threshold for n in nus]
    items.append(("a_e decreasing", bool(np.all(np.diff(ae) < 0))))
    el = [solve_xou(CASES["xou_log"].with_(nu=n)).threshold for n in nus]
    items.append(("e^b_l decreasing", bool(np.all(np.diff(el) < 0))))
    ok, bad = _check(items)
    say(4, "scaling and quantity laws (<= 1e-10)", ok, "" if ok else "; ".join(bad))
    assert ok


MC_PRICES = {
    "gbm_exp": [1.0, 1.5, 2.0],
    "gbm_log": [3.0, 5.0, 6.5],
    "xou_exp": [1.5, 2.3, 2.8],
    "xou_power": [1.5, 2.2, 2.6],
    "xou_log": [1.7, 2.6, 3.1],
}


@pytest.mark.slow
def test_criterion_5_monte_carlo_equivalence(say, solutions):
    cfg = McConfig(n_paths=200_000, dt=1 / 252, seed=42)
    t0 = time.perf_counter()
    items, worst = [], 0.0
    for case, prices in MC_PRICES.items():
        sol = solutions[case]
        evaluate = eval_value_gbm if case.startswith("gbm") else eval_value_xou
        for x in prices:
            assert x < sol.threshold
            est = mc_strategy_value(CASES[case], sol.threshold, cfg, initial_price=x)
            v = float(evaluate(sol, x))
            z = (est.mean - v) / est.std_error
            worst = max(worst, abs(z))
            items.append((f"{case} x={x} z={z:+.2f}", abs(z) <= 3.0))
            items.append((f"{case} x={x} bias/SE={est.truncation_bias_bound / est.std_error:.2g}",
                          est.truncation_bias_bound < 5 * est.std_error))
    sweeps = {
        "gbm_exp": np.round(np.arange(2.0, 3.0001, 0.05), 10),
        "xou_power": np.round(np.arange(2.5, 3.3001, 0.05), 10),
    }
    for case, grid in sweeps.items():
        best, _ = oracle_threshold_sweep(CASES[case], grid, cfg)
        step = float(np.max(np.diff(grid)))
        thr = solutions[case].threshold
        items.append((f"{case} sweep best={best} vs {thr:.4f}", abs(best - thr) <= step + 1e-12))
    elapsed = time.perf_counter() - t0
    items.append((f"runtime {elapsed:.1f}s", elapsed < 120.0))
    ok, bad = _check(items)
    say(5, "MC vs analytic within 3 SE, bias < 5 SE, sweep argmax (2e5 paths, < 2 min)", ok,
        f"max |z| = {worst:.2f}, runtime {elapsed:.1f}s" if ok else "; ".join(bad))
    assert ok


def test_criterion_6_nonconcavity_witnesses(say, solutions):
    items = []
    for case in ("xou_exp", "xou_power", "xou_log", "gbm_log_low"):
        sol = solutions[case]
        x = nonconcavity_witness(sol, np.linspace(0.05 * sol.threshold, sol.threshold, 100))
        items.append((f"{case} witness={x}", x is not None))
    ok, bad = _check(items)
    say(6, "positive second difference in the continuation region", ok,
        ", ".join(n for n, _ in items) if ok else "; ".join(bad))
    assert ok


def test_criterion_7_cli_determinism_and_exit_codes(say, tmp_path):
    base = ["verify", "--config", str(CONFIGS / "gbm_exp.toml"), "--seed", "42", "--paths", "20000"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    code_a = main([*base, "--out", str(a)])
    code_b = main([*base, "--out", str(b)])
    items = [("exit 0 on clean run", code_a == EXIT_OK and code_b == EXIT_OK),
             ("byte-identical JSON", a.read_bytes() == b.read_bytes())]
    json.loads(a.read_text())
    bad_cfg = tmp_path / "bad.toml"
    bad_cfg.write_text('r = 0.02\n[model]\nkind = "gbm"\nmu = 0.05\nsigma = -0.2\n[utility]\nkind = "log"\n')
    items.append(("invalid config -> 2", main(["verify", "--config", str(bad_cfg)]) == EXIT_CONFIG))
    code = main([*base, "--override-threshold", "2.0", "--out", str(tmp_path / "c.json")])
    items.append(("perturbed threshold -> 4", code == EXIT_VERIFY))
    ok, bad = _check(items)
    say(7, "CLI determinism and exit-code contract", ok, "" if ok else "; ".join(bad))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
