"""Statistical machinery for certifying the limit theorems.

Kept deliberately small: empirical samples, a one-sample Kolmogorov-
Smirnov test with the asymptotic p-value series, moment estimators with
standard errors, an exact birth-death stationary oracle (the constant-rate
queue is a birth-death chain, which gives an independent ground truth for
the simulator), and total variation distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "EmpiricalSample",
    "Moments",
    "BDChain",
    "ks_statistic",
    "kolmogorov_sf",
    "moments",
    "bd_stationary",
    "tv_distance",
]


@dataclass(frozen=True)
class EmpiricalSample:
    """Observed values, optionally time-weighted."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", w)
            if w.shape != self.values.shape:
                raise ValueError("weights must align with values")
            if w.min() < 0.0 or w.sum() <= 0.0:
                raise ValueError("weights must be nonnegative with positive sum")


def kolmogorov_sf(y: float) -> float:
    """Survival function of the Kolmogorov distribution,
    ``2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 y^2)``; below y=1 the
    theta-transformed series is used for accuracy."""
    if y <= 0.0:
        return 1.0
    if y < 1.0:
        # dual series: cdf = sqrt(2 pi)/y * sum_{j odd} exp(-j^2 pi^2/(8 y^2))
        cdf = 0.0
        for j in range(1, 20, 2):
            cdf += math.exp(-j * j * math.pi * math.pi / (8.0 * y * y))
        cdf *= math.sqrt(2.0 * math.pi) / y
        return min(1.0, max(0.0, 1.0 - cdf))
    total = 0.0
    sign = 1.0
    for j in range(1, 400):
        term = math.exp(-2.0 * j * j * y * y)
        total += sign * term
        if term < 1e-17:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_statistic(sample: EmpiricalSample, cdf: Callable) -> tuple[float, float]:
    """One-sample two-sided KS statistic and asymptotic p-value."""
    if sample.weights is not None:
        raise ValueError("KS test requires an unweighted sample")
    xs = np.sort(sample.values)
    m = len(xs)
    if m == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(xs), dtype=float)
    i = np.arange(m)
    d = float(np.maximum(f - i / m, (i + 1) / m - f).max())
    return d, kolmogorov_sf(math.sqrt(m) * d)


class Moments(NamedTuple):
    mean: float
    variance: float
    se_mean: float
    se_variance: float


def moments(sample: EmpiricalSample) -> Moments:
    """Mean, unbiased variance, and their standard errors (the variance SE
    uses the fourth central moment)."""
    if sample.weights is not None:
        raise ValueError("moments are defined for unweighted samples")
    x = sample.values
    m = len(x)
    if m < 2:
        raise ValueError("need at least two observations")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    centered = x - mean
    m4 = float((centered ** 4).mean())
    var_of_var = (m4 - var * var * (m - 3) / (m - 1)) / m
    return Moments(mean, var, math.sqrt(var / m), math.sqrt(max(var_of_var, 0.0)))


@dataclass(frozen=True)
class BDChain:
    """Truncated birth-death chain on states 0..J."""

    birth: np.ndarray
    death: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "birth", np.asarray(self.birth, dtype=float))
        object.__setattr__(self, "death", np.asarray(self.death, dtype=float))
        if self.birth.shape != self.death.shape or self.birth.ndim != 1:
            raise ValueError("birth and death rates must be equal-length vectors")
        if self.death[0] != 0.0:
            raise ValueError("death rate from state 0 must be 0")
        if np.any(self.birth[:-1] <= 0.0) or np.any(self.death[1:] <= 0.0):
            raise ValueError("chain must be irreducible up to the truncation")

    @classmethod
    def erlang_a(cls, arrival: float, mu: float, theta: float, servers: int,
                 tail_mass: float = 1e-12) -> "BDChain":
        """The constant-rate queue as a birth-death chain, truncated where
        the geometric tail bound drops below ``tail_mass``.

        Births are the arrival rate; deaths from state j are
        ``mu*min(j, servers) + theta*(j - servers)^+``.  Past the servers
        the death rate grows linearly, so the tail is super-geometric and
        the truncation point is found by extending until the bound clears.
        """
        if arrival <= 0.0 or mu <= 0.0 or theta <= 0.0 or servers < 1:
            raise ValueError("need positive rates and at least one server")
        death = lambda j: mu * min(j, servers) + theta * max(j - servers, 0)
        log_u = [0.0]
        total = 1.0
        j = 0
        while True:
            j += 1
            log_u.append(log_u[-1] + math.log(arrival) - math.log(death(j)))
            u = math.exp(log_u[-1])
            total += u
            ratio = arrival / death(j + 1)
            if (j > servers and ratio < 1.0
                    and u * (1.0 + ratio / (1.0 - ratio)) < tail_mass * total):
                break
            if j > 10_000_000:
                raise RuntimeError("birth-death truncation did not converge")
        states = np.arange(j + 1)
        return cls(
            birth=np.full(j + 1, arrival),
            death=mu * np.minimum(states, servers) + theta * np.maximum(states - servers, 0),
        )


def bd_stationary(chain: BDChain) -> np.ndarray:
    """Stationary law by the detailed-balance product formula, normalized in
    log space."""
    with np.errstate(divide="ignore"):
        log_ratio = np.log(chain.birth[:-1]) - np.log(chain.death[1:])
    log_u = np.concatenate(([0.0], np.cumsum(log_ratio)))
    if not np.isfinite(log_u).all():
        raise ValueError("degenerate chain: zero transition products")
    log_u -= log_u.max()
    u = np.exp(log_u)
    return u / u.sum()


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support lengths differ: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} does not sum to 1 (sum={v.sum()!r})")
    return 0.5 * float(np.abs(p - q).sum())
