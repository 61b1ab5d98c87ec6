"""Numba vs pure-numpy first-passage kernels.

Both backends draw the same normals, so the hit tables must match exactly;
the script checks that before reporting timings.

    python3 benchmarks/bench_kernels.py [--paths 500] [--repeat 3]
"""

import argparse
import math
import time

import numpy as np

from optsale import _kernels
from optsale.model import GbmParams, ProblemSpec, UtilitySpec, XouParams
from optsale.verify import _transition


def _case(problem, barrier, dt):
    return np.array([math.log(barrier)]), _transition(problem, dt), _transition(problem, dt / 2)


def bench(name, problem, barrier, n_paths, n_steps, refine, repeat, dt=1 / 252):
    barriers, step, half = _case(problem, barrier, dt)
    out = {}
    for backend in ("numba", "numpy"):
        # warm-up compiles (numba) and fills caches
        _kernels.first_passage(0.0, barriers, step, half, n_steps, refine, 7, 0, 8, backend)
        best = math.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            res = _kernels.first_passage(0.0, barriers, step, half, n_steps, refine, 7, 0, n_paths, backend)
            best = min(best, time.perf_counter() - t0)
        out[backend] = (best, res)
    same = all(np.array_equal(a, b, equal_nan=True) for a, b in zip(out["numba"][1], out["numpy"][1]))
    hit = out["numba"][1][0][:, 0]
    steps = np.where(hit >= 0, hit, refine * n_steps).sum() / refine
    tn, tp = out["numba"][0], out["numpy"][0]
    print(f"{name:<22} paths={n_paths:<6} steps={steps:>11.0f}  numba {tn * 1e9 / steps:7.1f} ns/step"
          f"  numpy {tp * 1e9 / steps:8.1f} ns/step  speedup {tp / tn:6.1f}x  identical={same}")
    return same


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    gbm = ProblemSpec(GbmParams(0.05, 0.2), UtilitySpec.exponential(0.5), 0.02)
    xou = ProblemSpec(XouParams(0.6, 1.0, 0.2), UtilitySpec.log(), 0.02)
    n_steps = 116_172  # 461 years of trading days
    ok = True
    ok &= bench("gbm s0=1 -> 2.51", gbm, 2.5129, args.paths, n_steps, 1, args.repeat)
    ok &= bench("gbm s0=1 -> 2.51 dt/2", gbm, 2.5129, args.paths, n_steps, 2, args.repeat)
    ok &= bench("xou x0=1 -> 3.42", xou, 3.4162, args.paths, n_steps, 1, args.repeat)
    print("backends agree" if ok else "BACKENDS DISAGREE")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
