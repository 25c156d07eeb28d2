"""Exact event-driven simulation of the prelimit queue.

At count Q and time t the instantaneous rates are: arrivals
``lambda^n_t``, abandonments ``theta_t (Q - K^n_t)^+``, and service
completions ``mu_t (Q ^ K^n_t)``.  Paths are generated by thinning
(Lewis-Shedler / Ogata): candidates come from a homogeneous bound over a
lookahead window built from exact interval suprema, and one uniform per
candidate both accepts and classifies the event.  Abandonment is driven by
its aggregate rate rather than per-customer clocks, which generates the
same count-process law.

Between events the compensator integrands are constant except at jumps of
the server count, so the martingale decomposition (each counting process
minus its compensator) and the quadratic variations are computed exactly
from closed-form rate integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .fluid import FluidPath
from .rates import PrelimitSystem, ScalingScheme, pack_pool, prelimit

__all__ = [
    "RecordFlags",
    "SimConfig",
    "SamplePath",
    "MartingaleReport",
    "simulate",
    "scaled_paths",
    "martingale_report",
    "ensemble_grid",
    "aggregate_grid",
    "martingale_ensemble",
    "occupancy_distribution",
]

ARRIVAL, ABANDON, SERVICE = 0, 1, 2
_WMAX = 1.0


@dataclass(frozen=True)
class RecordFlags:
    path: bool = True
    martingales: bool = False
    quadratic_variations: bool = False
    scaled: bool = False


@dataclass(frozen=True)
class SimConfig:
    scheme: ScalingScheme
    n: int
    horizon: float
    seed: int
    record: RecordFlags = field(default_factory=RecordFlags)

    def __post_init__(self) -> None:
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


@dataclass
class SamplePath:
    """One realization: event times, event types, and derived series."""

    times: np.ndarray
    types: np.ndarray
    q0: int
    n: int
    horizon: float
    seed: int
    rep: int
    scheme: ScalingScheme
    prelim: PrelimitSystem

    @cached_property
    def Q(self) -> np.ndarray:
        """Count after each event."""
        if len(self.times) == 0:
            return np.zeros(0, dtype=np.int64)
        return self.q0 + np.cumsum(np.where(self.types == ARRIVAL, 1, -1))

    def q_at(self, ts) -> np.ndarray:
        """Right-continuous count at the query times."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.horizon * (1 + 1e-12)):
            raise ValueError("query time outside the simulated horizon")
        full = np.concatenate(([self.q0], self.Q))
        idx = np.searchsorted(self.times, ts, side="right")
        return full[idx]

    def counts(self, ts, event_type: int) -> np.ndarray:
        sel = self.times[self.types == event_type]
        return np.searchsorted(sel, np.asarray(ts, dtype=float), side="right")

    def validate(self) -> None:
        """Assert the pathwise structural invariants."""
        t, q = self.times, self.Q
        if len(t) == 0:
            return
        if not np.all(np.diff(t) > 0.0):
            raise AssertionError("event times are not strictly increasing")
        if q.min() < 0:
            raise AssertionError("count went negative")
        if not np.isin(self.types, (ARRIVAL, ABANDON, SERVICE)).all():
            raise AssertionError("unknown event type")
        q_prev = np.concatenate(([self.q0], q[:-1]))
        kv = self.prelim.K_n.values(t)
        ab = self.types == ABANDON
        if not np.all(q_prev[ab] > kv[ab]):
            raise AssertionError("abandonment fired without queued customers")
        sv = self.types == SERVICE
        if not np.all(np.minimum(q_prev[sv], kv[sv]) >= 1):
            raise AssertionError("service fired without busy servers")
        arrivals = np.cumsum(self.types == ARRIVAL)
        if not np.all(q <= self.q0 + arrivals):
            raise AssertionError("count exceeded initial value plus arrivals")
        n_arr = int((self.types == ARRIVAL).sum())
        n_ab = int(ab.sum())
        n_sv = int(sv.sum())
        if q[-1] != self.q0 + n_arr - n_ab - n_sv:
            raise AssertionError("counting identity violated")

    def to_csv(self, fileobj) -> None:
        fileobj.write("t,event_type,Q\n")
        names = {ARRIVAL: "arrival", ABANDON: "abandonment", SERVICE: "service"}
        for t, y, q in zip(self.times, self.types, self.Q):
            fileobj.write(f"{t:.17g},{names[int(y)]},{int(q)}\n")


def _pool_and_seams(prelim: PrelimitSystem, scheme: ScalingScheme, horizon: float):
    lam_n = prelim.lam_n
    g = prelim.K_n.profile
    pool = pack_pool([lam_n, scheme.theta, scheme.mu, g])
    seams = sorted({
        b
        for f in (lam_n, scheme.theta, scheme.mu, g)
        for b in f.explicit_breakpoints()
        if 0.0 < b < horizon
    })
    return pool, np.array(seams, dtype=float)


def _event_capacity(prelim: PrelimitSystem, horizon: float) -> int:
    lam_total = prelim.lam_n.integral(0.0, horizon)
    # departures never exceed initial customers plus arrivals
    return int(prelim.Q0_n + 2.2 * lam_total + 10.0 * math.sqrt(lam_total + 1.0)) + 64


def _run_path(pool, seams, horizon, q0, state, record_events, grid, cap):
    kinds, coef, off, nt, nv, fstart = pool
    grid = np.zeros(0) if grid is None else np.asarray(grid, dtype=float)
    grid_q = np.zeros(len(grid), dtype=np.int64)
    ev_t = np.zeros(cap if record_events else 1)
    ev_type = np.zeros(cap if record_events else 1, dtype=np.int8)
    chunks_t: list[np.ndarray] = []
    chunks_y: list[np.ndarray] = []
    t, q, gi = 0.0, int(q0), 0
    rng = np.uint64(state)
    while True:
        status, t, q, rng_out, ne, gi = _kernels.thinning_kernel(
            kinds, coef, off, nt, nv, fstart,
            seams, float(horizon), _WMAX,
            float(t), int(q), rng,
            ev_t, ev_type, bool(record_events),
            grid, grid_q, int(gi),
        )
        rng = np.uint64(rng_out)
        if record_events and ne:
            chunks_t.append(ev_t[:ne].copy())
            chunks_y.append(ev_type[:ne].copy())
        if status == _kernels.STATUS_DONE:
            break
        if status == _kernels.STATUS_BOUND_VIOLATION:
            raise RuntimeError(
                f"thinning bound violated at t={t}: interval supremum "
                "contract broken")
    if record_events:
        times = np.concatenate(chunks_t) if chunks_t else np.zeros(0)
        types = np.concatenate(chunks_y) if chunks_y else np.zeros(0, np.int8)
    else:
        times = np.zeros(0)
        types = np.zeros(0, np.int8)
    return times, types, q, grid_q


def simulate(cfg: SimConfig, rep: int = 0) -> SamplePath:
    """Generate one exact sample path, reproducible from (config, seed, rep)."""
    prelim = prelimit(cfg.scheme, cfg.n, cfg.horizon)
    pool, seams = _pool_and_seams(prelim, cfg.scheme, cfg.horizon)
    cap = _event_capacity(prelim, cfg.horizon)
    state = _kernels.stream_state(cfg.seed, rep)
    times, types, _, _ = _run_path(
        pool, seams, cfg.horizon, prelim.Q0_n, state,
        record_events=True, grid=None, cap=cap)
    return SamplePath(
        times=times, types=types, q0=prelim.Q0_n, n=cfg.n,
        horizon=cfg.horizon, seed=cfg.seed, rep=rep,
        scheme=cfg.scheme, prelim=prelim)


def ensemble_grid(scheme: ScalingScheme, n: int, horizon: float, grid,
                  reps: int, seed: int, first_rep: int = 0,
                  workers: int = 1) -> np.ndarray:
    """Right-continuous counts sampled on a grid, one row per replication.

    Events are not retained, so this is the cheap path for law-of-large-
    numbers and terminal-law experiments.  Each replication is a pure
    function of its (seed, rep) stream, so fanning out across ``workers``
    threads never changes the result (the compiled kernels release the
    GIL)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and (grid.min() < 0.0 or grid.max() > horizon):
        raise ValueError("grid must lie within [0, horizon]")
    prelim = prelimit(scheme, n, horizon)
    pool, seams = _pool_and_seams(prelim, scheme, horizon)
    out = np.empty((reps, len(grid)), dtype=np.int64)

    def one(r: int) -> None:
        state = _kernels.stream_state(seed, first_rep + r)
        _, _, _, grid_q = _run_path(
            pool, seams, horizon, prelim.Q0_n, state,
            record_events=False, grid=grid, cap=0)
        out[r] = grid_q

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            list(pool_exec.map(one, range(reps)))
    else:
        for r in range(reps):
            one(r)
    return out


def aggregate_grid(scheme: ScalingScheme, n: int, horizon: float, grid,
                   reps: int, seed: int, workers: int = 1, block: int = 256):
    """Streaming mean and unbiased variance of Q/n on the grid.

    Replications are generated in blocks (in parallel when ``workers`` > 1)
    but always reduced in replication order, so the result is byte-identical
    for any worker count."""
    grid = np.asarray(grid, dtype=float)
    s1 = np.zeros(len(grid))
    s2 = np.zeros(len(grid))
    done = 0
    while done < reps:
        b = min(block, reps - done)
        qs = ensemble_grid(scheme, n, horizon, grid, b, seed,
                           first_rep=done, workers=workers)
        for row in qs:
            x = row / n
            s1 += x
            s2 += x * x
        done += b
    mean = s1 / reps
    var = (s2 - reps * mean * mean) / (reps - 1) if reps > 1 else np.zeros_like(s1)
    return mean, np.maximum(var, 0.0)


def aggregate_csv(grid, mean, var, reps: int, fileobj) -> None:
    fileobj.write("t,mean_Qn_over_n,var,reps\n")
    for t, m, v in zip(grid, mean, var):
        fileobj.write(f"{t:.17g},{m:.17g},{v:.17g},{reps}\n")


@dataclass(frozen=True)
class MartingaleReport:
    """Martingale components and predictable quadratic variations on a grid."""

    ts: np.ndarray
    m_arrival: np.ndarray
    m_abandon: np.ndarray
    m_service: np.ndarray
    qv_arrival: np.ndarray
    qv_abandon: np.ndarray
    qv_service: np.ndarray

    def to_csv(self, fileobj) -> None:
        fileobj.write("t,M_A,M_R,M_B,QV_A,QV_R,QV_B\n")
        for row in zip(self.ts, self.m_arrival, self.m_abandon, self.m_service,
                       self.qv_arrival, self.qv_abandon, self.qv_service):
            fileobj.write(",".join(f"{v:.17g}" for v in row) + "\n")


def martingale_report(sp: SamplePath, grid) -> MartingaleReport:
    """Counting processes minus exact compensators, plus the compensators
    themselves (which are the predictable quadratic variations)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty reporting grid")
    if grid.min() < 0.0 or grid.max() > sp.horizon * (1 + 1e-12):
        raise ValueError("grid must lie within the simulated horizon")
    gmax = float(grid.max())
    theta, mu = sp.scheme.theta, sp.scheme.mu

    jumps = sp.prelim.K_n.jump_times(0.0, gmax)
    seg = np.unique(np.concatenate(
        [[0.0], sp.times[sp.times <= gmax], jumps, grid]))
    q_seg = sp.q_at(seg[:-1])
    k_seg = sp.prelim.K_n.values(0.5 * (seg[:-1] + seg[1:]))

    th_cum = theta.cumulative(seg)
    mu_cum = mu.cumulative(seg)
    comp_r_steps = np.maximum(q_seg - k_seg, 0) * np.diff(th_cum)
    comp_b_steps = np.minimum(q_seg, k_seg) * np.diff(mu_cum)
    comp_r = np.concatenate(([0.0], np.cumsum(comp_r_steps)))
    comp_b = np.concatenate(([0.0], np.cumsum(comp_b_steps)))
    at = np.searchsorted(seg, grid)

    qv_a = sp.prelim.lam_n.cumulative(grid)
    qv_r = comp_r[at]
    qv_b = comp_b[at]
    return MartingaleReport(
        ts=grid,
        m_arrival=sp.counts(grid, ARRIVAL) - qv_a,
        m_abandon=sp.counts(grid, ABANDON) - qv_r,
        m_service=sp.counts(grid, SERVICE) - qv_b,
        qv_arrival=qv_a,
        qv_abandon=qv_r,
        qv_service=qv_b,
    )


def martingale_ensemble(scheme: ScalingScheme, n: int, t: float, reps: int,
                        seed: int):
    """Martingale values and quadratic variations at time t over many
    replications; returns two (reps, 3) arrays ordered (A, R, B)."""
    cfg = SimConfig(scheme=scheme, n=n, horizon=t, seed=seed)
    prelim = prelimit(scheme, n, t)
    pool, seams = _pool_and_seams(prelim, scheme, t)
    cap = _event_capacity(prelim, t)
    grid = np.array([t])
    m = np.empty((reps, 3))
    qv = np.empty((reps, 3))
    for r in range(reps):
        state = _kernels.stream_state(seed, r)
        times, types, _, _ = _run_path(
            pool, seams, t, prelim.Q0_n, state,
            record_events=True, grid=None, cap=cap)
        sp = SamplePath(times=times, types=types, q0=prelim.Q0_n, n=n,
                        horizon=t, seed=seed, rep=r, scheme=scheme,
                        prelim=prelim)
        rep = martingale_report(sp, grid)
        m[r] = (rep.m_arrival[0], rep.m_abandon[0], rep.m_service[0])
        qv[r] = (rep.qv_arrival[0], rep.qv_abandon[0], rep.qv_service[0])
    return m, qv


def scaled_paths(sp: SamplePath, fp: FluidPath, n: int, grid):
    """Fluid-scaled Q/n and diffusion-scaled sqrt(n)(Q/n - q) on a grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and grid.max() > min(sp.horizon, fp.horizon) * (1 + 1e-12):
        raise ValueError("grid exceeds the simulated or solved horizon")
    qn = sp.q_at(grid) / n
    fluid = np.asarray(fp.at(grid))
    return qn, math.sqrt(n) * (qn - fluid)


def occupancy_distribution(sp: SamplePath, j_max: int | None = None) -> np.ndarray:
    """Time-average occupancy distribution over [0, horizon]."""
    bounds = np.concatenate(([0.0], sp.times, [sp.horizon]))
    states = np.concatenate(([sp.q0], sp.Q)).astype(np.int64)
    durations = np.diff(bounds)
    size = (j_max + 1) if j_max is not None else int(states.max()) + 1
    hist = np.bincount(states, weights=durations, minlength=size)
    if j_max is not None:
        hist = hist[:size]
    return hist / sp.horizon
