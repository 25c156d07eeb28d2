"""Diffusion (central-limit) refinement of the queue and its stationary laws.

The centered, sqrt(n)-scaled count converges to a diffusion whose drift
switches between three cases according to the fluid's position relative to
capacity, and whose volatility

    sigma(t)^2 = lambda_t + theta_t (q_t - k_t)^+ + mu_t (q_t ^ k_t)

is a function of time only.  Paths are generated by Euler-Maruyama on a
uniform grid (weak order 1; since sigma does not depend on the state,
Milstein would coincide with it anyway).

For constant rates with unit capacity, the long-run law is Gaussian off
criticality and a piecewise Gaussian at it: density proportional to
``exp((alpha/mu) x) * (exp(-(theta/mu) x^2/2) for x >= 0,
exp(-x^2/2) for x < 0)``.  The two half-lines carry different curvature
because abandonment (rate theta) restores from above while idle servers
(rate mu) restore from below; the apparent asymmetry is real, not a sign
slip.  The normalizer is evaluated in closed form through the Gaussian
error function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import _kernels
from .fluid import FluidPath, Regime, regime_classify
from .rates import ScalingScheme

__all__ = [
    "DiffusionPath",
    "StationaryLaw",
    "solve_sde",
    "sde_terminals",
    "stationary_law",
    "qed_normalizer",
    "law_pdf",
    "law_cdf",
    "law_moments",
    "default_burn_in",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _phi(z: float) -> float:
    """Standard normal cdf."""
    return 0.5 * math.erfc(-z / _SQRT2)


@dataclass(frozen=True)
class DiffusionPath:
    """One Euler-Maruyama realization on a uniform grid."""

    ts: np.ndarray
    x: np.ndarray
    dt: float
    seed: int
    x0: float

    def to_csv(self, fileobj) -> None:
        fileobj.write("t,x\n")
        for t, x in zip(self.ts, self.x):
            fileobj.write(f"{t:.17g},{x:.17g}\n")


def coefficient_grid(scheme: ScalingScheme, fp: FluidPath, dt: float,
                     horizon: float | None = None):
    """Per-step (left endpoint) drift/volatility data along the fluid path.

    Returns (n_steps, alpha, theta, mu, gamma, sigma, branch) with arrays of
    length n_steps; branch is -1/0/+1 for fluid below / on / above capacity.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    horizon = fp.horizon if horizon is None else float(horizon)
    if horizon > fp.horizon * (1 + 1e-12):
        raise ValueError("fluid path does not cover the requested horizon")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon) or n_steps < 1:
        raise ValueError("horizon must be an integer multiple of dt")
    tl = np.arange(n_steps) * dt
    q = np.asarray(fp.at(tl))
    kv = scheme.k.values(tl)
    lam = scheme.lam.values(tl)
    th = scheme.theta.values(tl)
    mu = scheme.mu.values(tl)
    sigma = np.sqrt(lam + th * np.maximum(q - kv, 0.0) + mu * np.minimum(q, kv))
    return (
        n_steps,
        scheme.alpha.values(tl),
        th,
        mu,
        scheme.gamma.values(tl),
        sigma,
        np.asarray(fp.branch_at(tl), dtype=np.int8),
    )


def solve_sde(x0: float, scheme: ScalingScheme, fp: FluidPath, dt: float,
              seed: int, horizon: float | None = None) -> DiffusionPath:
    """One diffusion path; deterministic given the seed."""
    n_steps, alpha, th, mu, gamma, sigma, branch = coefficient_grid(
        scheme, fp, dt, horizon)
    states = _kernels.stream_states(seed, 1)
    _, paths = _kernels.em_paths(
        states, x0, dt, alpha, th, mu, gamma, sigma, branch, n_record=1)
    ts = np.arange(n_steps + 1) * dt
    return DiffusionPath(ts=ts, x=paths[0], dt=dt, seed=seed, x0=x0)


def sde_terminals(x0: float, scheme: ScalingScheme, fp: FluidPath, dt: float,
                  seed: int, n_paths: int,
                  horizon: float | None = None) -> np.ndarray:
    """Terminal values of ``n_paths`` independent paths (streams
    (seed, 0..n_paths-1)); the replication farm for distributional checks."""
    n_steps, alpha, th, mu, gamma, sigma, branch = coefficient_grid(
        scheme, fp, dt, horizon)
    states = _kernels.stream_states(seed, n_paths)
    terminal, _ = _kernels.em_paths(
        states, x0, dt, alpha, th, mu, gamma, sigma, branch, n_record=0)
    return terminal


def sde_moments(x0: float, scheme: ScalingScheme, fp: FluidPath, dt: float,
                seed: int, n_paths: int, horizon: float | None = None,
                batch: int = 64):
    """Streaming mean and unbiased variance of the diffusion on its grid,
    aggregated over ``n_paths`` paths in fixed-size batches (deterministic
    regardless of batching)."""
    n_steps, alpha, th, mu, gamma, sigma, branch = coefficient_grid(
        scheme, fp, dt, horizon)
    ts = np.arange(n_steps + 1) * dt
    s1 = np.zeros(n_steps + 1)
    s2 = np.zeros(n_steps + 1)
    done = 0
    while done < n_paths:
        b = min(batch, n_paths - done)
        states = _kernels.stream_states(seed, b, first_rep=done)
        _, paths = _kernels.em_paths(
            states, x0, dt, alpha, th, mu, gamma, sigma, branch, n_record=b)
        s1 += paths.sum(axis=0)
        s2 += (paths * paths).sum(axis=0)
        done += b
    mean = s1 / n_paths
    var = (s2 - n_paths * mean * mean) / (n_paths - 1) if n_paths > 1 else np.zeros_like(s1)
    return ts, mean, np.maximum(var, 0.0)


def moments_csv(ts, mean, var, n_paths: int, fileobj) -> None:
    fileobj.write("t,mean,var,n_paths\n")
    for t, m, v in zip(ts, mean, var):
        fileobj.write(f"{t:.17g},{m:.17g},{v:.17g},{n_paths}\n")


def default_burn_in(mu: float, theta: float) -> float:
    """Several relaxation times of the slowest restoring rate."""
    return 8.0 / min(mu, theta)


def qed_normalizer(alpha: float, mu: float, theta: float) -> float:
    """Normalization constant of the critical-regime piecewise density.

    With a = alpha/mu and b = theta/mu,
    ``1/C = exp(a^2/(2b)) sqrt(2 pi / b) Phi(a / sqrt(b))
           + exp(a^2/2) sqrt(2 pi) Phi(-a)``.
    """
    if mu <= 0.0 or theta <= 0.0:
        raise ValueError("mu and theta must be positive")
    a = alpha / mu
    b = theta / mu
    upper = math.exp(a * a / (2.0 * b)) * _SQRT2PI / math.sqrt(b) * _phi(a / math.sqrt(b))
    lower = math.exp(a * a / 2.0) * _SQRT2PI * _phi(-a)
    return 1.0 / (upper + lower)


@dataclass(frozen=True)
class StationaryLaw:
    """Closed-form long-run law: Gaussian, or the piecewise-Gaussian
    critical law."""

    kind: str  # "gaussian" | "qed-piecewise"
    mean: float = 0.0
    variance: float = 0.0
    alpha: float = 0.0
    mu: float = 0.0
    theta: float = 0.0
    C: float = 0.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            z = (x - self.mean) / math.sqrt(self.variance)
            out = np.exp(-0.5 * z * z) / (_SQRT2PI * math.sqrt(self.variance))
        else:
            a = self.alpha / self.mu
            b = self.theta / self.mu
            out = self.C * np.exp(a * x) * np.where(
                x >= 0.0, np.exp(-0.5 * b * x * x), np.exp(-0.5 * x * x))
        return out if out.ndim else float(out)

    def cdf(self, x):
        from scipy.special import ndtr

        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            out = ndtr((x - self.mean) / math.sqrt(self.variance))
            return out if x.ndim else float(out)
        a = self.alpha / self.mu
        b = self.theta / self.mu
        m = a / b
        rb = math.sqrt(b)
        lower_full = math.exp(a * a / 2.0) * _SQRT2PI * _phi(-a)
        below = math.exp(a * a / 2.0) * _SQRT2PI * ndtr(np.minimum(x, 0.0) - a)
        above = lower_full + (math.exp(a * a / (2.0 * b)) * _SQRT2PI / rb
                              * (ndtr(rb * (np.maximum(x, 0.0) - m)) - _phi(-rb * m)))
        out = self.C * np.where(x < 0.0, below, above)
        return out if x.ndim else float(out)

    def mean_var(self) -> tuple[float, float]:
        """Mean and variance: closed form for Gaussian, quadrature for the
        piecewise law."""
        if self.kind == "gaussian":
            return self.mean, self.variance
        lo, hi = self._support()
        m1 = quad(lambda x: x * self.pdf(x), lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
        m2 = quad(lambda x: x * x * self.pdf(x), lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
        return m1, m2 - m1 * m1

    def _support(self) -> tuple[float, float]:
        if self.kind == "gaussian":
            s = math.sqrt(self.variance)
            return self.mean - 14.0 * s, self.mean + 14.0 * s
        b = self.theta / self.mu
        spread = 14.0 * max(1.0, 1.0 / math.sqrt(b)) * (1.0 + abs(self.alpha / self.mu))
        return -spread, spread

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": self.kind,
                    "params": {"mean": self.mean, "variance": self.variance}}
        return {"kind": self.kind,
                "params": {"alpha": self.alpha, "mu": self.mu, "theta": self.theta},
                "C": self.C}


def stationary_law(lam: float, mu: float, theta: float, alpha: float,
                   q0: float) -> StationaryLaw:
    """Long-run law of the centered scaled count, by regime.

    Underloaded (or critical started below capacity): Gaussian with mean
    alpha/mu, variance lam/mu.  Overloaded (or critical started above):
    Gaussian with mean alpha/theta, variance lam/theta.  Critical started
    exactly on capacity: the piecewise-Gaussian law.
    """
    if lam <= 0.0 or mu <= 0.0 or theta <= 0.0:
        raise ValueError("rates must be positive")
    regime = regime_classify(lam, mu, q0)
    if regime in (Regime.UNDER, Regime.CRITICAL_BELOW):
        return StationaryLaw(kind="gaussian", mean=alpha / mu, variance=lam / mu)
    if regime in (Regime.OVER, Regime.CRITICAL_ABOVE):
        return StationaryLaw(kind="gaussian", mean=alpha / theta, variance=lam / theta)
    return StationaryLaw(kind="qed-piecewise", alpha=alpha, mu=mu, theta=theta,
                         C=qed_normalizer(alpha, mu, theta))


def law_pdf(law: StationaryLaw):
    """Evaluable density of a stationary law."""
    return law.pdf


def law_cdf(law: StationaryLaw):
    """Evaluable distribution function of a stationary law."""
    return law.cdf


def law_moments(law: StationaryLaw) -> tuple[float, float]:
    """(mean, variance) of a stationary law."""
    return law.mean_var()
