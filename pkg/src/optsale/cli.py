"""Command line front end: ``optsale solve|curve|verify``.

Configs are TOML files whose keys are flattened to dotted names
(``model.kind``, ``utility.gamma``, ``grid.min`` ...).  Every dotted key can
also be given on the command line as ``--model.mu 0.03``; values are parsed
as TOML scalars or arrays, falling back to plain strings.

Exit codes: 0 ok, 2 bad config or unwritable output, 3 numerical failure,
4 a verification check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .gbm import GbmSolution, eval_ce_gbm, eval_value_gbm, solve_gbm
from .model import (
    GbmParams,
    NumericalError,
    ProblemSpec,
    StrategyKind,
    UtilityKind,
    UtilitySpec,
    ValidationError,
    XouParams,
)
from .verify import (
    McConfig,
    increasing_along_grid,
    mc_strategy_value,
    oracle_threshold_sweep,
    smooth_pasting_audit,
    vi_residual_grid,
)
from .xou import XouSolution, eval_ce_xou, eval_value_xou, solve_xou

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

KNOWN_KEYS = {
    "model.kind", "model.mu", "model.sigma", "model.kappa", "model.theta", "model.eta",
    "utility.kind", "utility.gamma", "utility.p",
    "r", "nu", "initial_price",
    "grid.min", "grid.max", "grid.points", "grid.spacing",
    "curve.mode", "curve.nu", "curve.utilities",
    "mc.n_paths", "mc.dt", "mc.horizon", "mc.seed", "mc.refine", "mc.chunk_paths",
    "verify.prices", "verify.sweep", "verify.tol", "verify.override_threshold",
    "output.path", "output.format",
}

CURVE_COLUMNS = ("price", "utility", "value", "certainty_equivalent", "premium")


class ConfigError(ValidationError):
    pass


# ------------------------------------------------------------------------- config


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return flatten(tomllib.load(fh))
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"invalid TOML in {path}: {exc}") from None


def parse_overrides(tokens: list[str]) -> dict:
    """``--a.b value`` / ``--a.b=value`` pairs left over by argparse."""
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(tok, "unexpected argument")
        key = tok[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(key, "missing value")
            text = tokens[i + 1]
            i += 2
        out[key] = parse_value(text)
    return out


def _get(cfg: dict, key: str, default=None, required: bool = False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(key, "missing required key")
    return default


def _num(cfg: dict, key: str, default=None, required: bool = False) -> float | None:
    v = _get(cfg, key, default, required)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    return float(v)


def _int(cfg: dict, key: str, default=None) -> int | None:
    v = _get(cfg, key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    return v


def _num_list(cfg: dict, key: str) -> list[float] | None:
    v = _get(cfg, key)
    if v is None:
        return None
    if not isinstance(v, list) or not v or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(key, "expected a non-empty list of numbers")
    return [float(x) for x in v]


def _wrap(key_prefix: str, fn, *args, **kwargs):
    """Re-raise parameter validation errors under the dotted config key."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as exc:
        field_name = exc.field if "." in exc.field or not key_prefix else f"{key_prefix}.{exc.field}"
        raise ConfigError(field_name, str(exc).split(": ", 1)[-1]) from None


def parse_utility(text: str, key: str) -> UtilitySpec:
    """``exponential:0.5``, ``log`` or ``power:0.3``."""
    kind, _, arg = str(text).partition(":")
    try:
        if kind == "log" and not arg:
            return UtilitySpec.log()
        if kind == "exponential":
            return UtilitySpec.exponential(float(arg))
        if kind == "power":
            return UtilitySpec.power(float(arg))
    except ValueError:
        pass
    raise ConfigError(key, f"bad utility {text!r}; use exponential:<gamma>, log or power:<p>")


def build_problem(cfg: dict) -> ProblemSpec:
    kind = _get(cfg, "model.kind", required=True)
    if kind == "gbm":
        model = _wrap("model", GbmParams, _num(cfg, "model.mu", required=True),
                      _num(cfg, "model.sigma", required=True))
    elif kind == "xou":
        model = _wrap("model", XouParams, _num(cfg, "model.kappa", required=True),
                      _num(cfg, "model.theta", required=True), _num(cfg, "model.eta", required=True))
    else:
        raise ConfigError("model.kind", f"must be 'gbm' or 'xou', got {kind!r}")
    ukind = _get(cfg, "utility.kind", required=True)
    if ukind not in ("exponential", "log", "power"):
        raise ConfigError("utility.kind", f"must be exponential, log or power, got {ukind!r}")
    utility = _wrap("utility", UtilitySpec, ukind, gamma=_num(cfg, "utility.gamma"), p=_num(cfg, "utility.p"))
    return _wrap("", ProblemSpec, model, utility, _num(cfg, "r", required=True),
                 _num(cfg, "nu", 1.0), _num(cfg, "initial_price", 1.0))


@dataclass(frozen=True)
class GridSpec:
    min: float
    max: float
    points: int
    spacing: str = "linear"

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max) and self.min < self.max):
            raise ConfigError("grid.min", "need finite grid.min < grid.max")
        if self.min <= 0:
            raise ConfigError("grid.min", "prices must be > 0")
        if self.points < 2:
            raise ConfigError("grid.points", "must be >= 2")
        if self.spacing not in ("linear", "log"):
            raise ConfigError("grid.spacing", "must be 'linear' or 'log'")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.points)
        return np.linspace(self.min, self.max, self.points)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    grid: GridSpec | None
    mc: McConfig
    out_path: str | None
    out_format: str
    extra: dict = field(default_factory=dict)


def build_run_config(cfg: dict) -> RunConfig:
    unknown = sorted(set(cfg) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    problem = build_problem(cfg)
    grid = None
    if any(k.startswith("grid.") for k in cfg):
        grid = GridSpec(_num(cfg, "grid.min", required=True), _num(cfg, "grid.max", required=True),
                        _int(cfg, "grid.points", 200), str(_get(cfg, "grid.spacing", "linear")))
    horizon = _num(cfg, "mc.horizon")
    seed = _int(cfg, "mc.seed", 42)
    if not 0 <= seed < 2**64:
        raise ConfigError("mc.seed", "must be an unsigned 64-bit integer")
    mc = _wrap("mc", McConfig, n_paths=_int(cfg, "mc.n_paths", 200_000), dt=_num(cfg, "mc.dt", 1.0 / 252.0),
               horizon=horizon, seed=seed, refine=_int(cfg, "mc.refine", 1),
               chunk_paths=_int(cfg, "mc.chunk_paths", 50_000))
    fmt = _get(cfg, "output.format", "json")
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format", "must be 'csv' or 'json'")
    extra = {k: v for k, v in cfg.items() if k.split(".")[0] in ("curve", "verify")}
    return RunConfig(problem, grid, mc, _get(cfg, "output.path"), fmt, extra)


# ------------------------------------------------------------------------- helpers


def solve(problem: ProblemSpec):
    return solve_gbm(problem) if problem.is_gbm else solve_xou(problem)


def _value(sol, x):
    return eval_value_gbm(sol, x) if isinstance(sol, GbmSolution) else eval_value_xou(sol, x)


def _ce(sol, x):
    return eval_ce_gbm(sol, x) if isinstance(sol, GbmSolution) else eval_ce_xou(sol, x)


def jsonable(obj):
    """Floats stay floats; non-finite ones become strings ("inf")."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def fmt12(x) -> str:
    return format(float(x), ".12g")


def problem_record(problem: ProblemSpec) -> dict:
    m = problem.model
    if isinstance(m, GbmParams):
        model = {"kind": "gbm", "mu": m.mu, "sigma": m.sigma}
    else:
        model = {"kind": "xou", "kappa": m.kappa, "theta": m.theta, "eta": m.eta}
    u = problem.utility
    utility = {"kind": u.kind.value}
    if u.kind is UtilityKind.EXPONENTIAL:
        utility["gamma"] = u.gamma
    elif u.kind is UtilityKind.POWER:
        utility["p"] = u.p
    return {"model": model, "utility": utility, "r": problem.r, "nu": problem.nu,
            "initial_price": problem.initial_price}


def solution_record(sol) -> dict:
    rec = {"strategy": sol.strategy.kind.value}
    if sol.strategy.kind is StrategyKind.WAIT_FOREVER:
        rec["threshold"] = math.inf
    else:
        rec["threshold"] = sol.threshold
    if isinstance(sol, GbmSolution):
        rec["alpha"] = sol.alpha
        rec["coefficient"] = sol.coefficient
    else:
        rec["log_threshold"] = sol.b
        rec["coefficient"] = sol.coefficient
        rec["log_coefficient"] = sol.log_coefficient
        e = sol.eigen
        rec["eigen"] = {"kappa": e.kappa, "theta": e.theta, "eta": e.eta, "r": e.r,
                        "a": e.exponent, "c": e.scale}
        rec["lower_bracket"] = sol.bracket
    return rec


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError("--out", f"cannot write {path}: {exc.strerror}") from None


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def dump_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt12(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# ------------------------------------------------------------------------- commands


def cmd_solve(rc: RunConfig) -> int:
    sol = solve(rc.problem)
    record = {"problem": problem_record(rc.problem), **solution_record(sol)}
    if rc.out_path is not None:
        if rc.out_format == "json":
            _emit(dump_json(record), rc.out_path)
        else:
            _emit(dump_csv(("key", "value"), flatten(record).items()), rc.out_path)
    lines = [f"model      {rc.problem.model}", f"utility    {rc.problem.utility.label}",
             f"strategy   {record['strategy']}", f"threshold  {record['threshold']}"]
    if "log_threshold" in record:
        lines.append(f"log b      {record['log_threshold']}")
    if record.get("coefficient") is not None:
        lines.append(f"coeff      {record['coefficient']}")
    stream = sys.stdout if rc.out_path is not None else sys.stderr
    print("\n".join(lines), file=stream)
    if rc.out_path is None:
        _emit(dump_json(record), None)
    return EXIT_OK


def curve_rows(sol, prices: np.ndarray) -> list[tuple]:
    prices = np.sort(np.asarray(prices, dtype=float))
    util = np.atleast_1d(sol.problem.payoff(prices))
    value = np.atleast_1d(_value(sol, prices))
    ce, prem = (np.atleast_1d(v) for v in _ce(sol, prices))
    return [tuple(float(v) for v in row) for row in zip(prices, util, value, ce, prem)]


def _curve_price(rc: RunConfig, sol, meta: dict):
    if sol.strategy.kind is StrategyKind.WAIT_FOREVER:
        print("warning: wait-forever regime, value is unbounded; no curve rows written", file=sys.stderr)
        return CURVE_COLUMNS, []
    return CURVE_COLUMNS, curve_rows(sol, rc.grid.values())


def _curve_surface(rc: RunConfig, sol, meta: dict):
    nus = _num_list(rc.extra, "curve.nu")
    if nus is None:
        raise ConfigError("curve.nu", "surface mode needs a list of quantities")
    rows, thresholds = [], []
    for nu in nus:
        s = solve(_wrap("", rc.problem.with_, nu=nu))
        thresholds.append(s.threshold if s.strategy.kind is not StrategyKind.WAIT_FOREVER else math.inf)
        if s.strategy.kind is StrategyKind.WAIT_FOREVER:
            print(f"warning: wait-forever regime at nu={nu}; rows omitted", file=sys.stderr)
            continue
        rows.extend((nu,) + r for r in curve_rows(s, rc.grid.values()))
    meta["surface_thresholds"] = dict(zip([fmt12(n) for n in nus], thresholds))
    return ("nu",) + CURVE_COLUMNS, rows


def _curve_quantity(rc: RunConfig, sol, meta: dict):
    nus = _num_list(rc.extra, "curve.nu")
    if nus is None:
        raise ConfigError("curve.nu", "quantity mode needs a list of quantities")
    specs = _get(rc.extra, "curve.utilities", [])
    if not isinstance(specs, list) or not specs:
        raise ConfigError("curve.utilities", "expected a non-empty list such as ['exponential:0.5', 'log']")
    utilities = [parse_utility(s, "curve.utilities") for s in specs]
    header = ("nu",) + tuple(u.label for u in utilities)
    rows = []
    for nu in sorted(nus):
        row = [nu]
        for u in utilities:
            s = solve(_wrap("", rc.problem.with_, nu=nu, utility=u))
            row.append(math.inf if s.strategy.kind is StrategyKind.WAIT_FOREVER
                       else (math.nan if s.threshold is None else s.threshold))
        rows.append(tuple(row))
    return header, rows


def cmd_curve(rc: RunConfig) -> int:
    mode = _get(rc.extra, "curve.mode", "price")
    if mode not in ("price", "surface", "quantity"):
        raise ConfigError("curve.mode", "must be price, surface or quantity")
    if mode != "quantity" and rc.grid is None:
        raise ConfigError("grid.min", "curve needs a price grid")
    sol = solve(rc.problem)
    meta = {"problem": problem_record(rc.problem), "mode": mode, **solution_record(sol)}
    header, rows = {"price": _curve_price, "surface": _curve_surface, "quantity": _curve_quantity}[mode](rc, sol, meta)
    if rc.out_format == "csv":
        text = dump_csv(header, rows)
    else:
        text = dump_json({"metadata": meta, "columns": list(header), "rows": [list(r) for r in rows]})
    _emit(text, rc.out_path)
    return EXIT_OK


def _default_vi_grid(sol) -> np.ndarray:
    level = sol.threshold if sol.strategy.kind is StrategyKind.THRESHOLD else sol.problem.initial_price
    return np.linspace(0.2 * level, 2.0 * level, 200)


def run_verify(rc: RunConfig, override_threshold: float | None = None) -> dict:
    """All configured checks as a JSON-ready report (no timings, so it is deterministic)."""
    problem = rc.problem
    sol = solve(problem)
    checks = []

    def add(name, passed, **detail):
        checks.append({"check": name, "passed": bool(passed), **detail})

    if sol.strategy.kind is StrategyKind.THRESHOLD:
        sp = smooth_pasting_audit(sol)
        add("smooth_pasting", sp.passed, value_gap=sp.value_gap, derivative_gap=sp.derivative_gap, tol=sp.tol)
    tol = _num(rc.extra, "verify.tol", 1e-6)
    if sol.strategy.kind is not StrategyKind.WAIT_FOREVER:
        grid = rc.grid.values() if rc.grid is not None else _default_vi_grid(sol)
        vi = vi_residual_grid(sol, grid, tol=tol)
        add("vi_residual", vi.passed, max_violation=vi.max_violation, sign_pattern_ok=vi.sign_pattern_ok,
            dominance_ok=vi.dominance_ok, points=int(vi.prices.size), tol=tol)

    if sol.strategy.kind is StrategyKind.THRESHOLD:
        threshold = sol.threshold if override_threshold is None else override_threshold
        prices = _num_list(rc.extra, "verify.prices") or [problem.initial_price]
        for x in prices:
            est = mc_strategy_value(problem, threshold, rc.mc, initial_price=x)
            v = float(_value(sol, x))
            diff = est.mean - v
            ok = abs(diff) <= 3.0 * est.std_error and est.truncation_bias_bound < 5.0 * est.std_error
            if x >= threshold:
                ok = abs(diff) <= 1e-12 * max(1.0, abs(v))
            add("mc_value", ok, price=x, threshold=threshold, mc_mean=est.mean, std_error=est.std_error,
                analytic=v, z_score=diff / est.std_error if est.std_error > 0 else 0.0,
                truncation_bias_bound=est.truncation_bias_bound, n_paths=est.n)

    sweep = _num_list(rc.extra, "verify.sweep")
    if sweep is not None:
        best, table = oracle_threshold_sweep(problem, sweep, rc.mc)
        rows = [{"threshold": t, "mc_mean": e.mean, "std_error": e.std_error} for t, e in zip(sweep, table)]
        if sol.strategy.kind is StrategyKind.WAIT_FOREVER:
            add("sweep_increasing", increasing_along_grid(table, 3.0), best=best, table=rows)
        elif sol.strategy.kind is StrategyKind.THRESHOLD:
            step = max(np.diff(sweep)) if len(sweep) > 1 else 0.0
            add("sweep_argmax", abs(best - sol.threshold) <= step * (1 + 1e-12) or len(sweep) == 1,
                best=best, analytic=sol.threshold, grid_step=step, table=rows)
        else:
            add("sweep_argmax", best == sweep[0], best=best, table=rows)

    mc = rc.mc
    return {
        "tool": "optsale", "version": __version__, "command": "verify",
        "problem": problem_record(problem), "solution": solution_record(sol),
        "mc": {"n_paths": mc.n_paths, "dt": mc.dt, "horizon": mc.resolved_horizon(problem.r),
               "seed": mc.seed, "refine": mc.refine},
        "override_threshold": override_threshold,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


def cmd_verify(rc: RunConfig) -> int:
    override = _num(rc.extra, "verify.override_threshold")
    report = run_verify(rc, override)
    if rc.out_format == "csv":
        rows = [(c["check"], str(c["passed"]).lower(), c.get("price", ""), c.get("z_score", ""))
                for c in report["checks"]]
        text = dump_csv(("check", "passed", "price", "z_score"), rows)
    else:
        text = dump_json(report)
    _emit(text, rc.out_path)
    for c in report["checks"]:
        tag = "PASS" if c["passed"] else "FAIL"
        where = f" price={c['price']:g}" if "price" in c else ""
        print(f"{tag} {c['check']}{where}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# ------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optsale", description="Optimal asset sale thresholds under utility.")
    ap.add_argument("--version", action="version", version=f"optsale {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve for the optimal strategy"),
                           ("curve", "value / certainty-equivalent tables"),
                           ("verify", "run the verification checks")):
        p = sub.add_parser(name, help=helptext,
                           epilog="Any dotted config key may be overridden, e.g. --model.mu 0.03.")
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
        p.add_argument("--seed", type=int, help="MC seed (unsigned 64-bit)")
        p.add_argument("--paths", type=int, help="number of MC paths")
        p.add_argument("--override-threshold", type=float,
                       help="simulate this threshold instead of the solved one (verify only)")
    return ap


COMMANDS = {"solve": cmd_solve, "curve": cmd_curve, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.update(parse_overrides(rest))
        for key, val in (("output.path", args.out), ("output.format", args.format), ("mc.seed", args.seed),
                         ("mc.n_paths", args.paths), ("verify.override_threshold", args.override_threshold)):
            if val is not None:
                cfg[key] = val
        rc = build_run_config(cfg)
        return COMMANDS[args.command](rc)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
