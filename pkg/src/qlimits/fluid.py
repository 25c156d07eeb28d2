"""Fluid (law-of-large-numbers) limit of the queue.

The scaled count ``q_t`` solves

    q_t = q_0 + int_0^t lambda_s ds - int_0^t theta_s (q_s - k_s)^+ ds
          - int_0^t mu_s (q_s ^ k_s) ds

an ODE whose drift is globally Lipschitz but kinked where q crosses the
capacity profile k.  The solver is an adaptive Dormand-Prince 4(5) pair
with bisection-based event location at those crossings, so no accepted
step straddles a kink; integration also restarts at explicit breakpoints
of the rate functions.  Dense output (the standard quartic interpolant) is
kept per step for evaluation between nodes.

The located crossings also yield a branch profile (below / on / above
capacity per segment) that the diffusion solver uses to select its drift
case.  Classifying whole segments rather than individual time points keeps
an exponential approach to the boundary on the correct side even after the
gap falls below floating-point resolution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .rates import RateFunction

__all__ = ["FluidPath", "Regime", "solve_fluid", "fluid_equilibrium", "regime_classify"]

# Dormand-Prince 4(5) tableau, 5th-order propagation weights, embedded
# error weights, and the quartic dense-output matrix.
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(7)


class Regime(enum.Enum):
    UNDER = "UNDER"
    OVER = "OVER"
    CRITICAL_BELOW = "CRITICAL_BELOW"
    CRITICAL_AT = "CRITICAL_AT"
    CRITICAL_ABOVE = "CRITICAL_ABOVE"


@dataclass(frozen=True)
class FluidPath:
    """Time-gridded fluid solution with dense interpolation."""

    ts: np.ndarray
    q: np.ndarray
    q0: float
    lam: RateFunction
    mu: RateFunction
    theta: RateFunction
    k: RateFunction
    horizon: float
    tol: float
    crossings: np.ndarray
    # dense segments: left edge, full-step size, left value, quartic coefs
    seg_t0: np.ndarray
    seg_h: np.ndarray
    seg_y0: np.ndarray
    seg_coef: np.ndarray
    # branch profile: boundaries[i] <= t < boundaries[i+1] has code branch[i]
    branch_bounds: np.ndarray
    branch_codes: np.ndarray

    def at(self, t) -> np.ndarray | float:
        """Dense-output evaluation (vectorized)."""
        tq = np.asarray(t, dtype=float)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        if tq.size and (tq.min() < 0.0 or tq.max() > self.horizon * (1 + 1e-12)):
            raise ValueError("query time outside the solved horizon")
        idx = np.clip(np.searchsorted(self.seg_t0, tq, side="right") - 1,
                      0, len(self.seg_t0) - 1)
        th = (tq - self.seg_t0[idx]) / self.seg_h[idx]
        out = self.seg_y0[idx] + self.seg_h[idx] * th * (
            self.seg_coef[idx, 0] + th * (
                self.seg_coef[idx, 1] + th * (
                    self.seg_coef[idx, 2] + th * self.seg_coef[idx, 3])))
        return float(out[0]) if scalar else out

    def branch_at(self, t) -> np.ndarray | int:
        """-1 below capacity, 0 on it, +1 above, per crossing segment."""
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.branch_bounds, tq, side="right") - 1,
                      0, len(self.branch_codes) - 1)
        out = self.branch_codes[idx]
        return int(out[0]) if np.ndim(t) == 0 else out

    def residual_max(self) -> float:
        """Max over grid nodes of the integral-equation residual, with the
        integral taken by 7-point Gauss-Legendre on each grid cell."""
        ts = self.ts
        cum = np.zeros(len(ts))
        half = 0.5 * np.diff(ts)
        mid = 0.5 * (ts[:-1] + ts[1:])
        cells = half[:, None] * _GL_NODES[None, :] + mid[:, None]
        flat = cells.ravel()
        qv = np.asarray(self.at(flat))
        kv = self.k.values(flat)
        fv = (self.lam.values(flat)
              - self.theta.values(flat) * np.maximum(qv - kv, 0.0)
              - self.mu.values(flat) * np.minimum(qv, kv))
        cell_int = half * (fv.reshape(cells.shape) @ _GL_WEIGHTS)
        cum[1:] = np.cumsum(cell_int)
        return float(np.abs(self.q - self.q0 - cum).max())

    def to_csv(self, fileobj) -> None:
        fileobj.write("t,q\n")
        for t, q in zip(self.ts, self.q):
            fileobj.write(f"{t:.17g},{q:.17g}\n")


def _drift(lam, mu, theta, k):
    def f(t: float, q: float) -> float:
        kt = k.value(t)
        excess = q - kt
        return (lam.value(t)
                - (theta.value(t) * excess if excess > 0.0 else 0.0)
                - mu.value(t) * (q if q < kt else kt))
    return f


def solve_fluid(q0: float, lam: RateFunction, mu: RateFunction,
                theta: RateFunction, k: RateFunction, horizon: float,
                tol: float = 1e-8, grid=None) -> FluidPath:
    """Solve the fluid equation on [0, horizon].

    The returned path satisfies the integral-equation residual bound
    ``residual_max() <= tol`` (the solve is retried with tighter internal
    tolerances if needed).  ``grid`` adds user time points to the output
    nodes via dense interpolation.
    """
    if horizon <= 0.0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if tol <= 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if q0 < 0.0:
        raise ValueError(f"q0 must be >= 0, got {q0}")
    user_grid = None
    if grid is not None:
        user_grid = np.asarray(grid, dtype=float)
        if user_grid.size and (user_grid.min() < 0.0 or user_grid.max() > horizon):
            raise ValueError("grid points must lie within [0, horizon]")

    seams = sorted({0.0, horizon} | {
        b for f in (lam, mu, theta, k) for b in f.explicit_breakpoints()
        if 0.0 < b < horizon})
    internal = tol * 1e-2
    last_res = math.inf
    for _ in range(3):
        path = _integrate(q0, lam, mu, theta, k, horizon, internal, seams, tol, user_grid)
        last_res = path.residual_max()
        if last_res <= tol:
            return path
        internal *= 0.02
    raise RuntimeError(
        f"fluid solve residual {last_res:.3e} exceeds tol {tol:.3e} "
        "after tightening")


def _integrate(q0, lam, mu, theta, k, horizon, ltol, seams, tol, user_grid):
    f = _drift(lam, mu, theta, k)
    ts = [0.0]
    qs = [q0]
    seg_t0, seg_h, seg_y0, seg_coef = [], [], [], []
    crossings: list[float] = []

    e0 = q0 - k.value(0.0)
    sticky = 0 if e0 == 0.0 else (1 if e0 > 0.0 else -1)

    t, y = 0.0, q0
    for right in seams[1:]:
        while t < right:
            t, y, sticky = _advance_panel(
                f, k, t, y, right, ltol, sticky,
                ts, qs, seg_t0, seg_h, seg_y0, seg_coef, crossings)
        # re-evaluate the crossing state across a rate seam
        e = y - k.value(min(right, horizon))
        if e != 0.0:
            new_sign = 1 if e > 0.0 else -1
            if sticky != 0 and new_sign != sticky:
                crossings.append(right)
            sticky = new_sign

    seg_t0 = np.array(seg_t0)
    seg_h = np.array(seg_h)
    seg_y0 = np.array(seg_y0)
    seg_coef = np.array(seg_coef).reshape(len(seg_t0), 4)
    ts = np.array(ts)
    qs = np.array(qs)
    if user_grid is not None and user_grid.size:
        all_t = np.unique(np.concatenate([ts, user_grid]))
    else:
        all_t = ts

    cross_arr = np.array(sorted(set(crossings)))
    path = FluidPath(
        ts=all_t, q=np.zeros_like(all_t), q0=q0, lam=lam, mu=mu, theta=theta,
        k=k, horizon=horizon, tol=tol, crossings=cross_arr,
        seg_t0=seg_t0, seg_h=seg_h, seg_y0=seg_y0, seg_coef=seg_coef,
        branch_bounds=np.zeros(1), branch_codes=np.zeros(1, dtype=np.int8),
    )
    q_all = np.asarray(path.at(all_t))
    bounds, codes = _branch_profile(path, cross_arr, horizon)
    return FluidPath(
        ts=all_t, q=q_all, q0=q0, lam=lam, mu=mu, theta=theta, k=k,
        horizon=horizon, tol=tol, crossings=cross_arr,
        seg_t0=seg_t0, seg_h=seg_h, seg_y0=seg_y0, seg_coef=seg_coef,
        branch_bounds=bounds, branch_codes=codes,
    )


def _advance_panel(f, k, t, y, right, ltol, sticky,
                   ts, qs, seg_t0, seg_h, seg_y0, seg_coef, crossings):
    """One accepted (possibly event-truncated) step inside a seam panel."""
    k1 = f(t, y)
    h = min(right - t, 1.0, max(0.01, 0.1 * (1.0 + abs(y)) / (1.0 + abs(k1))))
    K = np.zeros(7)
    at_end = False
    while True:
        if h < 1e-13 * max(1.0, abs(t)):
            raise RuntimeError(f"fluid step size underflow at t={t}")
        h = min(h, right - t)
        at_end = h >= (right - t) * (1.0 - 1e-12)
        if at_end:
            h = right - t
        K[0] = k1
        for i in range(1, 6):
            yi = y + h * sum(a * K[j] for j, a in enumerate(_A[i]))
            K[i] = f(t + _C[i] * h, yi)
        y_new = y + h * sum(b * K[j] for j, b in enumerate(_B))
        K[6] = f(t + h, y_new)
        err = abs(h * sum(e * K[j] for j, e in enumerate(_E)))
        scale = ltol + ltol * max(abs(y), abs(y_new))
        if err <= scale:
            break
        h *= max(0.2, 0.9 * (scale / err) ** 0.2)

    dcoef = _P.T @ K  # quartic dense-output coefficients
    t_new = right if at_end else t + h

    # event location: strict sign change of q - k with a sticky reference
    e1 = y_new - k.value(t_new)
    fired = sticky != 0 and (e1 * sticky < 0.0)
    if fired:
        lo, hi = t, t_new
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            th = (mid - t) / h
            ym = y + h * th * (dcoef[0] + th * (dcoef[1] + th * (dcoef[2] + th * dcoef[3])))
            em = ym - k.value(mid)
            if em * sticky > 0.0:
                lo = mid
            else:
                hi = mid
        t_new = hi
        th = (t_new - t) / h
        y_new = y + h * th * (dcoef[0] + th * (dcoef[1] + th * (dcoef[2] + th * dcoef[3])))
        crossings.append(t_new)
        sticky = -sticky
    elif sticky == 0 and e1 != 0.0:
        sticky = 1 if e1 > 0.0 else -1

    seg_t0.append(t)
    seg_h.append(h)
    seg_y0.append(y)
    seg_coef.append(dcoef)
    ts.append(t_new)
    qs.append(y_new)
    return t_new, y_new, sticky


def _branch_profile(path: FluidPath, crossings: np.ndarray, horizon: float):
    """Classify each inter-crossing segment as below (-1), on (0), or
    above (+1) capacity.

    The sign is read at the point of largest |q - k| strictly inside the
    segment (endpoints are crossings, or capacity jumps whose
    right-continuous value belongs to the next segment), which stays
    correct even when an exponential approach to the boundary falls below
    floating-point resolution; a segment is "on" capacity only when
    |q - k| never exceeds the tie band."""
    bounds = np.concatenate([[0.0], crossings, [horizon]])
    codes = np.zeros(len(bounds) - 1, dtype=np.int8)
    for i in range(len(codes)):
        a, b = bounds[i], bounds[i + 1]
        probes = np.linspace(a, b, 67)[1:-1]
        kv = path.k.values(probes)
        e = np.asarray(path.at(probes)) - kv
        band = 1e-9 * max(1.0, float(np.abs(kv).max()))
        j = int(np.abs(e).argmax())
        if abs(e[j]) <= band:
            codes[i] = 0
        else:
            codes[i] = 1 if e[j] > 0.0 else -1
    return bounds, codes


def fluid_equilibrium(lam: float, mu: float, theta: float) -> float:
    """Long-run fluid level for constant rates with unit capacity.

    This is the unique zero of the drift
    ``lam - theta*(q-1)^+ - mu*min(q, 1)``: overloaded systems settle at
    ``(lam - mu)/theta + 1``, underloaded ones at ``lam/mu``; both formulas
    give 1 when lam == mu.
    """
    if lam <= 0.0 or mu <= 0.0 or theta <= 0.0:
        raise ValueError("rates must be positive")
    if lam >= mu:
        return (lam - mu) / theta + 1.0
    return lam / mu


def regime_classify(lam: float, mu: float, q0: float) -> Regime:
    """Offered-load regime, with the critical case split by q0 vs 1."""
    if lam <= 0.0 or mu <= 0.0:
        raise ValueError("rates must be positive")
    if q0 < 0.0:
        raise ValueError("q0 must be >= 0")
    if lam < mu:
        return Regime.UNDER
    if lam > mu:
        return Regime.OVER
    if q0 < 1.0:
        return Regime.CRITICAL_BELOW
    if q0 > 1.0:
        return Regime.CRITICAL_ABOVE
    return Regime.CRITICAL_AT
