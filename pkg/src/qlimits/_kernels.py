"""Hot numeric kernels: event thinning and Euler-Maruyama stepping.

Every function here is written once and compiled with numba when the
backend enables it (see :mod:`qlimits._backend`); with ``QLIMITS_NUMBA=0``
the identical source runs as plain Python.  Randomness comes from a
counter-style splitmix64 stream so that results are bit-reproducible per
(seed, replication) and independent of how replications are scheduled.

Rate functions arrive packed as flat arrays (see
:meth:`qlimits.rates.RateFunction.pack`); a "pool" holds several functions
in one arena with per-function term ranges.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import NUMBA_ENABLED, as_u64, jit

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX_B = 0xBF58476D1CE4E5B9
_MIX_C = 0x94D049BB133111EB
_STREAM_SALT = 0xD1B54A32D192ED03
_U53 = 1.1102230246251565e-16  # 2**-53
TWO_PI = 6.283185307179586

# status codes returned by the thinning kernel
STATUS_DONE = 0
STATUS_BUFFER_FULL = 1
STATUS_BOUND_VIOLATION = 2


def splitmix64(z: int) -> int:
    """Finalizer of the splitmix64 generator (pure Python, for stream setup)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_B) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_C) & MASK64
    return z ^ (z >> 31)


def stream_state(seed: int, rep: int) -> int:
    """Initial RNG state for replication ``rep`` of run ``seed``.

    Streams are decorrelated by pushing (seed, rep) through the finalizer
    twice; draws within a stream then advance the state by the golden-ratio
    increment and finalize (counter-based, so streams can be resumed or
    evaluated out of order).
    """
    s = splitmix64((seed & MASK64) ^ _STREAM_SALT)
    return splitmix64((s + (rep & MASK64) * GOLDEN) & MASK64)


def stream_states(seed: int, reps: int, first_rep: int = 0) -> np.ndarray:
    return np.array(
        [stream_state(seed, first_rep + r) for r in range(reps)], dtype=np.uint64
    )


# -- in-kernel RNG ----------------------------------------------------------

@jit
def _mix64(z):
    z = ((z ^ (z >> 30)) * _MIX_B) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_C) & MASK64
    return z ^ (z >> 31)


@jit
def _u01_open(z):
    """Map a 64-bit word to (0, 1] (safe for log)."""
    return ((z >> 11) + 1) * _U53


@jit
def _u01(z):
    """Map a 64-bit word to [0, 1)."""
    return (z >> 11) * _U53


# -- packed rate-function evaluation ----------------------------------------

@jit
def _seg_index(node_t, lo, hi, t):
    """Greatest j in [lo, hi) with node_t[j] <= t (right-continuous piece)."""
    a = lo
    b = hi
    while b - a > 1:
        m = (a + b) // 2
        if node_t[m] <= t:
            a = m
        else:
            b = m
    return a


@jit
def _pool_value(kinds, coef, off, node_t, node_v, t0, t1, t):
    s = 0.0
    for i in range(t0, t1):
        k = kinds[i]
        if k == 0:
            s += coef[i, 0]
        elif k == 3:
            s += coef[i, 0] + coef[i, 1] * math.sin(coef[i, 2] * t + coef[i, 3])
        else:
            j = _seg_index(node_t, off[i], off[i + 1], t)
            if k == 1:
                s += node_v[j]
            else:
                last = off[i + 1] - 1
                if j >= last:
                    s += node_v[last]
                else:
                    w = (t - node_t[j]) / (node_t[j + 1] - node_t[j])
                    s += node_v[j] + w * (node_v[j + 1] - node_v[j])
    return s


@jit
def _pool_bound(kinds, coef, off, node_t, node_v, t0, t1, s, t, want_sup):
    """Sum of per-term interval extrema: exact for a single primitive,
    a valid outer bound for sums."""
    total = 0.0
    for i in range(t0, t1):
        k = kinds[i]
        if k == 0:
            total += coef[i, 0]
            continue
        if k == 3:
            a = coef[i, 0]
            b = coef[i, 1]
            w = coef[i, 2]
            p = coef[i, 3]
            v0 = a + b * math.sin(w * s + p)
            v1 = a + b * math.sin(w * t + p)
            best = max(v0, v1) if want_sup else min(v0, v1)
            if b != 0.0 and w > 0.0:
                m_lo = math.ceil((w * s + p) / math.pi - 0.5)
                m_hi = math.floor((w * t + p) / math.pi - 0.5)
                m = m_lo
                while m <= m_hi and m < m_lo + 2:
                    ext = a + b * math.sin(math.pi * (m + 0.5))
                    if want_sup:
                        best = max(best, ext)
                    else:
                        best = min(best, ext)
                    m += 1
            total += best
            continue
        lo = off[i]
        hi = off[i + 1]
        js = _seg_index(node_t, lo, hi, s)
        je = _seg_index(node_t, lo, hi, t)
        if k == 1:
            best = node_v[js]
            for j in range(js, je + 1):
                if want_sup:
                    best = max(best, node_v[j])
                else:
                    best = min(best, node_v[j])
        else:
            v0 = _pool_value(kinds, coef, off, node_t, node_v, i, i + 1, s)
            v1 = _pool_value(kinds, coef, off, node_t, node_v, i, i + 1, t)
            best = max(v0, v1) if want_sup else min(v0, v1)
            for j in range(js + 1, je + 1):
                if node_t[j] > s and node_t[j] < t:
                    if want_sup:
                        best = max(best, node_v[j])
                    else:
                        best = min(best, node_v[j])
        total += best
    return total


@jit
def _server_count(kinds, coef, off, node_t, node_v, g0, g1, t):
    g = _pool_value(kinds, coef, off, node_t, node_v, g0, g1, t)
    k = int(math.floor(g + 0.5))
    if k < 1:
        k = 1
    return k


# -- thinning simulation kernel ----------------------------------------------

@jit
def thinning_kernel(
    kinds, coef, off, node_t, node_v, fstart,
    wbp, horizon, wmax,
    t_in, q_in, rng_in,
    ev_t, ev_type, record_events,
    grid, grid_q, gi_in,
):
    """Exact event simulation of the queue by thinning.

    The pool holds four functions: arrival rate, abandonment rate theta,
    service rate mu, and the real-valued server profile g (servers are
    ``max(1, round(g))``).  Candidates are drawn from a homogeneous bound
    over a lookahead window capped at ``wmax`` and at the next explicit
    rate breakpoint in ``wbp``; a single uniform per candidate both accepts
    and classifies the event (order: arrival, abandonment, service).  The
    bound is refreshed after every accepted event and window expiry.

    Returns (status, t, q, rng_state, n_events, grid_index); resumable when
    the event buffer fills (status 1).
    """
    l0 = fstart[0]
    l1 = fstart[1]
    th0 = fstart[1]
    th1 = fstart[2]
    m0 = fstart[2]
    m1 = fstart[3]
    g0 = fstart[3]
    g1 = fstart[4]

    t = t_in
    q = q_in
    s = as_u64(rng_in)
    ne = 0
    gi = gi_in
    cap = ev_t.shape[0]
    n_grid = grid.shape[0]
    nbp = wbp.shape[0]

    while t < horizon:
        # lookahead cell on an absolute grid (multiples of wmax, cut at the
        # explicit rate breakpoints), so the candidate stream is a pure
        # function of (rates, seed) and does not depend on event buffering
        cell = math.floor(t / wmax)
        w_lo = cell * wmax
        w_end = (cell + 1.0) * wmax
        j = np.searchsorted(wbp, t, side="right")
        if j < nbp and wbp[j] < w_end:
            w_end = wbp[j]
        if j > 0 and wbp[j - 1] > w_lo:
            w_lo = wbp[j - 1]
        if w_end > horizon:
            w_end = horizon
        if w_end <= t:
            w_end = t + wmax
        lam_sup = _pool_bound(kinds, coef, off, node_t, node_v, l0, l1, w_lo, w_end, True)
        th_sup = _pool_bound(kinds, coef, off, node_t, node_v, th0, th1, w_lo, w_end, True)
        mu_sup = _pool_bound(kinds, coef, off, node_t, node_v, m0, m1, w_lo, w_end, True)
        g_lo = _pool_bound(kinds, coef, off, node_t, node_v, g0, g1, w_lo, w_end, False)
        g_hi = _pool_bound(kinds, coef, off, node_t, node_v, g0, g1, w_lo, w_end, True)
        k_lb = int(math.floor(g_lo + 0.5))
        if k_lb < 1:
            k_lb = 1
        k_ub = int(math.floor(g_hi + 0.5))
        if k_ub < 1:
            k_ub = 1

        advanced = False
        while not advanced:
            excess = q - k_lb
            if excess < 0:
                excess = 0
            busy = q if q < k_ub else k_ub
            bound = lam_sup + th_sup * excess + mu_sup * busy
            if bound <= 0.0:
                return STATUS_BOUND_VIOLATION, t, q, s, ne, gi
            s = (s + GOLDEN) & MASK64
            t_cand = t - math.log(_u01_open(_mix64(s))) / bound
            if t_cand >= w_end:
                t = w_end
                advanced = True
                break
            s = (s + GOLDEN) & MASK64
            u = bound * _u01(_mix64(s))
            a = _pool_value(kinds, coef, off, node_t, node_v, l0, l1, t_cand)
            if u < a:
                typ = 0
                dq = 1
            else:
                kk = _server_count(kinds, coef, off, node_t, node_v, g0, g1, t_cand)
                exc = q - kk
                if exc < 0:
                    exc = 0
                r = _pool_value(kinds, coef, off, node_t, node_v, th0, th1, t_cand) * exc
                if u < a + r:
                    typ = 1
                    dq = -1
                else:
                    busy_t = q if q < kk else kk
                    b = _pool_value(kinds, coef, off, node_t, node_v, m0, m1, t_cand) * busy_t
                    if u < a + r + b:
                        typ = 2
                        dq = -1
                    else:
                        if a + r + b > bound * (1.0 + 1e-9):
                            return STATUS_BOUND_VIOLATION, t_cand, q, s, ne, gi
                        t = t_cand
                        continue
            # accepted: sample the grid strictly before the event time
            while gi < n_grid and grid[gi] < t_cand:
                grid_q[gi] = q
                gi += 1
            t = t_cand
            q += dq
            if record_events:
                ev_t[ne] = t
                ev_type[ne] = typ
            ne += 1
            if record_events and ne >= cap:
                return STATUS_BUFFER_FULL, t, q, s, ne, gi
            # bound terms depending on q are recomputed at the loop head

    while gi < n_grid and grid[gi] <= horizon:
        grid_q[gi] = q
        gi += 1
    return STATUS_DONE, t, q, s, ne, gi


# -- Euler-Maruyama kernels ---------------------------------------------------

@jit
def em_kernel(states, x0, dt, sqrt_dt,
              alpha, theta, mu, gamma, sigma, branch,
              terminal, paths, n_record):
    """Euler-Maruyama over a precomputed coefficient grid, one RNG stream
    per path.  ``branch[j]`` selects the drift case from the fluid position
    at step j: -1 strictly below capacity, 0 on it, +1 strictly above.
    Records the first ``n_record`` full paths; always fills ``terminal``.
    """
    n_paths = states.shape[0]
    n_steps = alpha.shape[0]
    for p in range(n_paths):
        s = as_u64(states[p])
        x = x0
        if p < n_record:
            paths[p, 0] = x
        for j in range(n_steps):
            br = branch[j]
            if br < 0:
                d = alpha[j] - mu[j] * x
            elif br > 0:
                d = alpha[j] - theta[j] * (x - gamma[j]) - mu[j] * gamma[j]
            else:
                xp = x - gamma[j]
                if xp < 0.0:
                    xp = 0.0
                xm = x if x < gamma[j] else gamma[j]
                d = alpha[j] - theta[j] * xp - mu[j] * xm
            s = (s + GOLDEN) & MASK64
            u1 = _u01_open(_mix64(s))
            s = (s + GOLDEN) & MASK64
            u2 = _u01(_mix64(s))
            z = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
            x = x + d * dt + sigma[j] * sqrt_dt * z
            if p < n_record:
                paths[p, j + 1] = x
        terminal[p] = x
    return terminal


def em_numpy(states, x0, dt, sqrt_dt,
             alpha, theta, mu, gamma, sigma, branch,
             terminal, paths, n_record):
    """Vectorized-over-paths twin of :func:`em_kernel` (the numpy fallback).

    Consumes the same per-(path, step) counter draws, so it agrees with the
    compiled kernel up to last-ulp differences in libm calls.
    """
    n_paths = states.shape[0]
    n_steps = alpha.shape[0]
    s = states.astype(np.uint64)
    x = np.full(n_paths, float(x0))
    if n_record:
        paths[:, 0] = x[:n_record]
    golden = np.uint64(GOLDEN)
    mb = np.uint64(_MIX_B)
    mc = np.uint64(_MIX_C)
    for j in range(n_steps):
        if branch[j] < 0:
            d = alpha[j] - mu[j] * x
        elif branch[j] > 0:
            d = alpha[j] - theta[j] * (x - gamma[j]) - mu[j] * gamma[j]
        else:
            d = (alpha[j] - theta[j] * np.maximum(x - gamma[j], 0.0)
                 - mu[j] * np.minimum(x, gamma[j]))
        s += golden
        z1 = s.copy()
        z1 ^= z1 >> np.uint64(30)
        z1 *= mb
        z1 ^= z1 >> np.uint64(27)
        z1 *= mc
        z1 ^= z1 >> np.uint64(31)
        s += golden
        z2 = s.copy()
        z2 ^= z2 >> np.uint64(30)
        z2 *= mb
        z2 ^= z2 >> np.uint64(27)
        z2 *= mc
        z2 ^= z2 >> np.uint64(31)
        u1 = ((z1 >> np.uint64(11)) + np.uint64(1)) * _U53
        u2 = (z2 >> np.uint64(11)) * _U53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)
        x = x + d * dt + sigma[j] * sqrt_dt * z
        if n_record:
            paths[:, j + 1] = x[:n_record]
    terminal[:] = x
    return terminal


def em_paths(states, x0, dt, alpha, theta, mu, gamma, sigma, branch,
             n_record=0):
    """Run the Euler-Maruyama ensemble on the active backend.

    Returns (terminal, paths) where ``paths`` has shape
    (n_record, n_steps + 1).
    """
    n_paths = states.shape[0]
    n_steps = alpha.shape[0]
    n_record = min(n_record, n_paths)
    terminal = np.empty(n_paths)
    paths = np.empty((n_record, n_steps + 1))
    fn = em_kernel if NUMBA_ENABLED else em_numpy
    fn(states, float(x0), float(dt), math.sqrt(dt),
       alpha, theta, mu, gamma, sigma, branch, terminal, paths, n_record)
    return terminal, paths
