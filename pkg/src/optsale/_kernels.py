"""First-passage path kernels: a numba version and a pure-numpy fallback.

Both simulate the affine log-price recursion

    y[k+1] = a * y[k] + b + c * N[k]

(GBM: a = 1; OU: a = exp(-kappa dt)) and record, for every barrier in an
increasing list, the first grid index with y >= barrier.  With
``refine=2`` a Brownian-bridge midpoint is inserted between coarse steps
from a second, independent stream, so the coarse skeleton is identical to
the ``refine=1`` run (common random numbers across step sizes).

Random numbers: every (seed, path, stream) triple owns a xoshiro256**
generator seeded through SplitMix64; normals come from Doornik's 128-layer
ziggurat.  A path's draws never depend on which other paths are simulated
alongside it, so any partition of the paths reproduces the serial result.

Set ``OPTSALE_DISABLE_NUMBA=1`` to force the numpy path.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53

ZIG_LAYERS = 128
ZIG_R = 3.442619855899
ZIG_V = 9.91256303526217e-3


def _zig_tables():
    x = np.empty(ZIG_LAYERS + 1)
    f = math.exp(-0.5 * ZIG_R * ZIG_R)
    x[0] = ZIG_V / f
    x[1] = ZIG_R
    x[ZIG_LAYERS] = 0.0
    for i in range(2, ZIG_LAYERS):
        x[i] = math.sqrt(-2.0 * math.log(ZIG_V / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    ratio = x[1:] / x[:-1]
    return x, ratio


ZIG_X, ZIG_RATIO = _zig_tables()


def use_numba(backend: str | None = None) -> bool:
    if backend is None:
        backend = "numpy" if os.environ.get("OPTSALE_DISABLE_NUMBA", "") not in ("", "0") else "numba"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba" and HAVE_NUMBA


# --------------------------------------------------------------------------- numba


if HAVE_NUMBA:
    # Generator state travels as a 4-tuple of uint64 so it stays in registers;
    # the ziggurat tables are read as globals (frozen constants).  Passing
    # arrays into the out-of-line slow path costs refcount traffic per draw.

    @njit(cache=True, inline="always")
    def _rotl(x, k):
        return (x << _U64(k)) | (x >> _U64(64 - k))

    @njit(cache=True)
    def _seed_stream(seed, path, stream):
        st = seed + _GOLDEN * (_U64(2) * _U64(path) + _U64(stream) + _U64(1))
        out = [_U64(0)] * 4
        for i in range(4):
            st += _GOLDEN
            z = st
            z = (z ^ (z >> _U64(30))) * _MIX1
            z = (z ^ (z >> _U64(27))) * _MIX2
            out[i] = z ^ (z >> _U64(31))
        return (out[0], out[1], out[2], out[3])

    @njit(cache=True, inline="always")
    def _next(st):
        s0, s1, s2, s3 = st
        result = _rotl(s1 * _U64(5), 7) * _U64(9)
        t = s1 << _U64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        return result, (s0, s1, s2, s3)

    @njit(cache=True, inline="always")
    def _uniform_open(st):
        w, st = _next(st)
        return (float(np.int64(w >> _U64(11))) + 0.5) * _TWO_M53, st

    @njit(cache=True)
    def _normal_tail(st, negative):
        x = 0.0
        for _ in range(1_000_000):
            v1, st = _uniform_open(st)
            v2, st = _uniform_open(st)
            x = math.log(v1) / ZIG_R
            if -2.0 * math.log(v2) >= x * x:
                break
        return (x - ZIG_R if negative else ZIG_R - x), st

    @njit(cache=True)
    def _normal_slow(st, u, i):
        # rejected from the box: tail, wedge test, or a fresh draw
        for _ in range(1_000_000):
            if i == 0:
                return _normal_tail(st, u < 0.0)
            x = u * ZIG_X[i]
            f0 = math.exp(-0.5 * (ZIG_X[i] * ZIG_X[i] - x * x))
            f1 = math.exp(-0.5 * (ZIG_X[i + 1] * ZIG_X[i + 1] - x * x))
            v, st = _uniform_open(st)
            if f1 + v * (f0 - f1) < 1.0:
                return x, st
            w, st = _next(st)
            u = 2.0 * (float(np.int64(w >> _U64(11))) * _TWO_M53) - 1.0
            i = np.int64(w & _U64(0x7F))
            if abs(u) < ZIG_RATIO[i]:
                return u * ZIG_X[i], st
        return 0.0, st

    @njit(cache=True, inline="always")
    def _normal(st):
        w, st = _next(st)
        u = 2.0 * (float(np.int64(w >> _U64(11))) * _TWO_M53) - 1.0
        i = np.int64(w & _U64(0x7F))
        if abs(u) < ZIG_RATIO[i]:
            return u * ZIG_X[i], st
        return _normal_slow(st, u, i)

    @njit(cache=True)
    def _normals_nb(seed, path_start, n_paths, n_draws, stream):
        out = np.empty((n_paths, n_draws))
        for p in range(n_paths):
            st = _seed_stream(seed, path_start + p, stream)
            for k in range(n_draws):
                out[p, k], st = _normal(st)
        return out

    @njit(cache=True)
    def _first_passage_nb(y0, barriers, a, b, c, ah, bh, ch, n_steps, refine,
                          seed, path_start, n_paths):
        nb = barriers.shape[0]
        hit_idx = np.full((n_paths, nb), -1, np.int64)
        hit_y = np.full((n_paths, nb), np.nan)
        y_end = np.empty(n_paths)
        # midpoint given both ends: Gaussian posterior of the two half steps
        bridge_mean_w = ah / (1.0 + ah * ah)
        bridge_sd = ch / math.sqrt(1.0 + ah * ah)
        bridge_shift = bh * (1.0 - ah) / (1.0 + ah * ah)
        for p in range(n_paths):
            sa = _seed_stream(seed, path_start + p, 0)
            sb = _seed_stream(seed, path_start + p, 1)
            y = y0
            j = 0
            while j < nb and y >= barriers[j]:
                hit_idx[p, j] = 0
                hit_y[p, j] = y
                j += 1
            level = barriers[j] if j < nb else np.inf
            k = 0
            while j < nb and k < n_steps:
                z, sa = _normal(sa)
                y_next = a * y + b + c * z
                if refine == 2:
                    zm, sb = _normal(sb)
                    ym = bridge_mean_w * (y + y_next) + bridge_shift + bridge_sd * zm
                    while j < nb and ym >= barriers[j]:
                        hit_idx[p, j] = 2 * k + 1
                        hit_y[p, j] = ym
                        j += 1
                k += 1
                y = y_next
                if y >= level:
                    while j < nb and y >= barriers[j]:
                        hit_idx[p, j] = refine * k
                        hit_y[p, j] = y
                        j += 1
                    level = barriers[j] if j < nb else np.inf
            y_end[p] = y
        return hit_idx, hit_y, y_end


# --------------------------------------------------------------------------- numpy


def _rotl_np(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


def seed_streams(seed: int, paths: np.ndarray, stream: int) -> np.ndarray:
    """xoshiro256** states, shape (4, n), for the given path ids."""
    with np.errstate(over="ignore"):
        st = _U64(seed) + _GOLDEN * (_U64(2) * paths.astype(np.uint64) + _U64(stream) + _U64(1))
        out = np.empty((4, paths.size), np.uint64)
        for i in range(4):
            st = st + _GOLDEN
            z = st
            z = (z ^ (z >> _U64(30))) * _MIX1
            z = (z ^ (z >> _U64(27))) * _MIX2
            out[i] = z ^ (z >> _U64(31))
    return out


def _next_np(S, cols):
    s0, s1, s2, s3 = S[0, cols], S[1, cols], S[2, cols], S[3, cols]
    with np.errstate(over="ignore"):
        result = _rotl_np(s1 * _U64(5), 7) * _U64(9)
        t = s1 << _U64(17)
    s2 = s2 ^ s0
    s3 = s3 ^ s1
    s1 = s1 ^ s2
    s0 = s0 ^ s3
    s2 = s2 ^ t
    s3 = _rotl_np(s3, 45)
    S[0, cols], S[1, cols], S[2, cols], S[3, cols] = s0, s1, s2, s3
    return result


def _uniform_open_np(S, cols):
    return ((_next_np(S, cols) >> _U64(11)).astype(float) + 0.5) * _TWO_M53


def normal_np(S, cols):
    """One ziggurat normal for each column in ``cols`` (same draws as numba)."""
    out = np.empty(cols.size)
    pending = np.arange(cols.size)
    while pending.size:
        c = cols[pending]
        w = _next_np(S, c)
        u = 2.0 * ((w >> _U64(11)).astype(float) * _TWO_M53) - 1.0
        i = (w & _U64(0x7F)).astype(np.int64)
        box = np.abs(u) < ZIG_RATIO[i]
        out[pending[box]] = u[box] * ZIG_X[i[box]]
        rest = ~box

        tail = rest & (i == 0)
        if tail.any():
            t_pend = pending[tail]
            negative = u[tail] < 0
            todo = np.arange(t_pend.size)
            while todo.size:
                tc = cols[t_pend[todo]]
                x = np.log(_uniform_open_np(S, tc)) / ZIG_R
                y = np.log(_uniform_open_np(S, tc))
                ok = -2.0 * y >= x * x
                done = todo[ok]
                out[t_pend[done]] = np.where(negative[done], x[ok] - ZIG_R, ZIG_R - x[ok])
                todo = todo[~ok]

        wedge = rest & (i != 0)
        retry = np.zeros(pending.size, bool)
        if wedge.any():
            iw = i[wedge]
            x = u[wedge] * ZIG_X[iw]
            f0 = np.exp(-0.5 * (ZIG_X[iw] ** 2 - x * x))
            f1 = np.exp(-0.5 * (ZIG_X[iw + 1] ** 2 - x * x))
            ok = f1 + _uniform_open_np(S, cols[pending[wedge]]) * (f0 - f1) < 1.0
            widx = pending[wedge]
            out[widx[ok]] = x[ok]
            retry[np.nonzero(wedge)[0][~ok]] = True
        pending = pending[retry]
    return out


def _normals_np(seed, path_start, n_paths, n_draws, stream):
    S = seed_streams(seed, np.arange(path_start, path_start + n_paths), stream)
    cols = np.arange(n_paths)
    out = np.empty((n_paths, n_draws))
    for k in range(n_draws):
        out[:, k] = normal_np(S, cols)
    return out


def _record(act, yv, barriers, j, hit_idx, hit_y, index):
    nb = barriers.size
    while act.size:
        live = j[act] < nb
        act, yv = act[live], yv[live]
        if not act.size:
            break
        hit = yv >= barriers[j[act]]
        act, yv = act[hit], yv[hit]
        hit_idx[act, j[act]] = index
        hit_y[act, j[act]] = yv
        j[act] += 1


def _first_passage_np(y0, barriers, a, b, c, ah, bh, ch, n_steps, refine,
                      seed, path_start, n_paths):
    nb = barriers.size
    ids = np.arange(path_start, path_start + n_paths)
    sa = seed_streams(seed, ids, 0)
    sb = seed_streams(seed, ids, 1) if refine == 2 else None
    hit_idx = np.full((n_paths, nb), -1, np.int64)
    hit_y = np.full((n_paths, nb), np.nan)
    y = np.full(n_paths, float(y0))
    j = np.zeros(n_paths, np.int64)
    every = np.arange(n_paths)
    _record(every, y.copy(), barriers, j, hit_idx, hit_y, 0)
    bridge_mean_w = ah / (1.0 + ah * ah)
    bridge_sd = ch / math.sqrt(1.0 + ah * ah)
    bridge_shift = bh * (1.0 - ah) / (1.0 + ah * ah)
    active = every[j < nb]
    k = 0
    while active.size and k < n_steps:
        ya = y[active]
        y_next = a * ya + b + c * normal_np(sa, active)
        if refine == 2:
            ym = bridge_mean_w * (ya + y_next) + bridge_shift + bridge_sd * normal_np(sb, active)
            _record(active, ym, barriers, j, hit_idx, hit_y, 2 * k + 1)
        k += 1
        y[active] = y_next
        _record(active, y_next, barriers, j, hit_idx, hit_y, refine * k)
        active = active[j[active] < nb]
    return hit_idx, hit_y, y


# --------------------------------------------------------------------------- dispatch


def first_passage(y0, barriers, step, half_step, n_steps, refine, seed, path_start, n_paths,
                  backend: str | None = None):
    """Simulate ``n_paths`` paths starting at path id ``path_start``.

    ``step`` and ``half_step`` are the (a, b, c) recursion coefficients for dt
    and dt/2.  Returns ``(hit_idx, hit_y, y_end)``; ``hit_idx`` counts fine
    grid points (dt / refine) and is -1 where the barrier was never reached.
    """
    if refine not in (1, 2):
        raise ValueError("refine must be 1 or 2")
    barriers = np.ascontiguousarray(barriers, dtype=float)
    if barriers.ndim != 1 or barriers.size == 0 or np.any(np.diff(barriers) <= 0):
        raise ValueError("barriers must be a non-empty strictly increasing 1-D array")
    a, b, c = (float(v) for v in step)
    ah, bh, ch = (float(v) for v in half_step)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if use_numba(backend):
        return _first_passage_nb(float(y0), barriers, a, b, c, ah, bh, ch, int(n_steps), int(refine),
                                 _U64(seed), int(path_start), int(n_paths))
    return _first_passage_np(float(y0), barriers, a, b, c, ah, bh, ch, int(n_steps), int(refine),
                             seed, int(path_start), int(n_paths))


def standard_normals(seed: int, path_start: int, n_paths: int, n_draws: int, stream: int = 0,
                     backend: str | None = None) -> np.ndarray:
    """Raw ziggurat draws of the per-path streams, shape (n_paths, n_draws)."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if use_numba(backend):
        return _normals_nb(_U64(seed), int(path_start), int(n_paths), int(n_draws), int(stream))
    return _normals_np(seed, int(path_start), int(n_paths), int(n_draws), int(stream))
