"""Time-varying rate and capacity functions.

Rate functions form a small closed algebra of primitives (constant,
piecewise-constant, piecewise-linear, sinusoid, and finite sums of these)
so that integrals and interval suprema are available in closed form.
Trustworthy suprema are what make the thinning simulator exact, so
arbitrary user callables are deliberately not supported.

The same objects describe the limit data (q0, x0, lambda, alpha, k, gamma,
mu, theta) and, via :func:`prelimit`, the n-th prelimit system: arrival
rate ``n*lambda + sqrt(n)*alpha``, server count
``max(1, round(n*k + sqrt(n)*gamma))`` and initial count
``max(0, round(n*q0 + sqrt(n)*x0))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "RateFunction",
    "ScalingScheme",
    "ServerCount",
    "PrelimitSystem",
    "PackedRate",
    "prelimit",
]

# Packed kind codes shared with the kernels.
KIND_CONSTANT = 0
KIND_PCONST = 1
KIND_PLINEAR = 2
KIND_SINUSOID = 3

_KIND_NAMES = {
    "constant": KIND_CONSTANT,
    "piecewise-constant": KIND_PCONST,
    "piecewise-linear": KIND_PLINEAR,
    "sinusoid": KIND_SINUSOID,
}


class PackedRate(NamedTuple):
    """Flat array encoding of a rate function, consumable by the kernels.

    A function is a sum of ``m`` primitive terms.  ``kinds[i]`` is the kind
    code of term i, ``coef[i, :4]`` its scalar coefficients (constant value,
    or sinusoid ``a + b*sin(omega*t + phase)``), and for piecewise terms
    ``node_t[off[i]:off[i+1]]`` / ``node_v[...]`` hold breakpoints and values.
    """

    kinds: np.ndarray
    coef: np.ndarray
    off: np.ndarray
    node_t: np.ndarray
    node_v: np.ndarray


def _as_float_tuple(xs) -> tuple[float, ...]:
    return tuple(float(x) for x in xs)


@dataclass(frozen=True)
class RateFunction:
    """One member of the rate-function algebra.

    Use the classmethod constructors; the raw constructor is internal.
    ``signed`` marks functions that may take negative values (the
    perturbation profiles alpha and gamma); unsigned functions are
    validated nonnegative, and strictly positive for the non-sinusoid
    primitives.
    """

    kind: str
    params: tuple[float, ...] = ()
    breakpoints: tuple[float, ...] = ()
    terms: tuple["RateFunction", ...] = ()
    signed: bool = False

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value: float, signed: bool = False) -> "RateFunction":
        f = cls(kind="constant", params=(float(value),), signed=signed)
        f._validate()
        return f

    @classmethod
    def piecewise_constant(
        cls, breakpoints: Sequence[float], values: Sequence[float], signed: bool = False
    ) -> "RateFunction":
        f = cls(
            kind="piecewise-constant",
            params=_as_float_tuple(values),
            breakpoints=_as_float_tuple(breakpoints),
            signed=signed,
        )
        f._validate()
        return f

    @classmethod
    def piecewise_linear(
        cls, breakpoints: Sequence[float], values: Sequence[float], signed: bool = False
    ) -> "RateFunction":
        f = cls(
            kind="piecewise-linear",
            params=_as_float_tuple(values),
            breakpoints=_as_float_tuple(breakpoints),
            signed=signed,
        )
        f._validate()
        return f

    @classmethod
    def sinusoid(
        cls, offset: float, amplitude: float, omega: float, phase: float = 0.0,
        signed: bool = False,
    ) -> "RateFunction":
        f = cls(
            kind="sinusoid",
            params=(float(offset), float(amplitude), float(omega), float(phase)),
            signed=signed,
        )
        f._validate()
        return f

    @classmethod
    def sum_of(cls, terms: Sequence["RateFunction"]) -> "RateFunction":
        flat: list[RateFunction] = []
        for t in terms:
            flat.extend(t.terms if t.kind == "sum" else (t,))
        if len(flat) == 1:
            return flat[0]
        f = cls(
            kind="sum",
            terms=tuple(flat),
            signed=any(t.signed for t in flat),
        )
        f._validate()
        return f

    def __add__(self, other: "RateFunction") -> "RateFunction":
        if not isinstance(other, RateFunction):
            return NotImplemented
        return RateFunction.sum_of([self, other])

    def scaled(self, c: float) -> "RateFunction":
        """Return c*f.  Negative c flips an unsigned function to signed."""
        c = float(c)
        signed = self.signed or c < 0.0
        if self.kind == "constant":
            return RateFunction(
                "constant", (self.params[0] * c,), signed=signed)
        if self.kind in ("piecewise-constant", "piecewise-linear"):
            return RateFunction(
                self.kind, tuple(v * c for v in self.params),
                self.breakpoints, signed=signed)
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            return RateFunction("sinusoid", (a * c, b * c, w, p), signed=signed)
        return RateFunction(
            "sum", terms=tuple(t.scaled(c) for t in self.terms), signed=signed)

    # -- validation ----------------------------------------------------

    def _validate(self) -> None:
        if self.kind == "constant":
            if len(self.params) != 1 or not math.isfinite(self.params[0]):
                raise ValueError("constant rate needs one finite value")
            if not self.signed and self.params[0] <= 0.0:
                raise ValueError(
                    f"rate constant must be > 0, got {self.params[0]}")
        elif self.kind in ("piecewise-constant", "piecewise-linear"):
            bp, v = self.breakpoints, self.params
            if len(bp) != len(v) or len(bp) < (2 if self.kind == "piecewise-linear" else 1):
                raise ValueError("breakpoints and values must align")
            if bp[0] != 0.0:
                raise ValueError("piecewise functions must start at t=0")
            if any(b >= a for b, a in zip(bp, bp[1:])):
                raise ValueError("breakpoints must be strictly increasing")
            if not all(map(math.isfinite, v)):
                raise ValueError("piecewise values must be finite")
            if not self.signed and min(v) <= 0.0:
                raise ValueError("piecewise rate values must be > 0")
        elif self.kind == "sinusoid":
            a, b, w, p = self.params
            if not all(map(math.isfinite, (a, b, w, p))):
                raise ValueError("sinusoid coefficients must be finite")
            if w < 0.0:
                raise ValueError("sinusoid frequency must be >= 0")
            if not self.signed and a - abs(b) < 0.0:
                # Touching zero (a == |b|) is allowed; 1 + sin(t) is a rate.
                raise ValueError(
                    f"sinusoid dips negative: offset {a}, amplitude {b}")
        elif self.kind == "sum":
            if not self.terms:
                raise ValueError("empty sum")
            # A sum of certified-nonnegative terms is nonnegative; sums
            # containing signed terms get horizon checks at the use site.
        else:
            raise ValueError(f"unknown rate function kind {self.kind!r}")

    # -- evaluation ----------------------------------------------------

    def value(self, t: float) -> float:
        """Function value at t >= 0, right-continuous at breakpoints."""
        if t < 0.0:
            raise ValueError(f"rate functions live on t >= 0, got t={t}")
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "piecewise-constant":
            j = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
            return self.params[j]
        if self.kind == "piecewise-linear":
            bp, v = self.breakpoints, self.params
            if t >= bp[-1]:
                return v[-1]
            j = int(np.searchsorted(bp, t, side="right")) - 1
            w = (t - bp[j]) / (bp[j + 1] - bp[j])
            return v[j] + w * (v[j + 1] - v[j])
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            return a + b * math.sin(w * t + p)
        return sum(term.value(t) for term in self.terms)

    def values(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`value`."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and ts.min() < 0.0:
            raise ValueError("rate functions live on t >= 0")
        if self.kind == "constant":
            return np.full(ts.shape, self.params[0])
        if self.kind == "piecewise-constant":
            j = np.searchsorted(self.breakpoints, ts, side="right") - 1
            return np.asarray(self.params)[j]
        if self.kind == "piecewise-linear":
            return np.interp(ts, self.breakpoints, self.params)
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            return a + b * np.sin(w * ts + p)
        out = np.zeros(ts.shape)
        for term in self.terms:
            out += term.values(ts)
        return out

    # -- integration ---------------------------------------------------

    def integral(self, s: float, t: float) -> float:
        """Exact integral over [s, t]; requires 0 <= s <= t."""
        if s < 0.0 or t < s:
            raise ValueError(f"need 0 <= s <= t, got [{s}, {t}]")
        return float(self.cumulative(np.array([t]))[0] - self.cumulative(np.array([s]))[0])

    def cumulative(self, ts: np.ndarray) -> np.ndarray:
        """Antiderivative F(t) = integral over [0, t], vectorized."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and ts.min() < 0.0:
            raise ValueError("rate functions live on t >= 0")
        if self.kind == "constant":
            return self.params[0] * ts
        if self.kind == "piecewise-constant":
            bp = np.asarray(self.breakpoints)
            v = np.asarray(self.params)
            cum = np.concatenate(([0.0], np.cumsum(v[:-1] * np.diff(bp))))
            j = np.searchsorted(bp, ts, side="right") - 1
            return cum[j] + v[j] * (ts - bp[j])
        if self.kind == "piecewise-linear":
            bp = np.asarray(self.breakpoints)
            v = np.asarray(self.params)
            seg = 0.5 * (v[:-1] + v[1:]) * np.diff(bp)
            cum = np.concatenate(([0.0], np.cumsum(seg)))
            j = np.clip(np.searchsorted(bp, ts, side="right") - 1, 0, len(bp) - 2)
            vt = self.values(ts)
            inner = cum[j] + 0.5 * (v[j] + vt) * (np.minimum(ts, bp[-1]) - bp[j])
            tail = v[-1] * np.maximum(ts - bp[-1], 0.0)
            return inner + tail
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            if w == 0.0:
                return (a + b * math.sin(p)) * ts
            return a * ts - (b / w) * (np.cos(w * ts + p) - math.cos(p))
        out = np.zeros(ts.shape)
        for term in self.terms:
            out += term.cumulative(ts)
        return out

    # -- interval bounds -------------------------------------------------

    def sup_on(self, s: float, t: float) -> float:
        """Upper bound over [s, t]: exact for primitives, a valid
        (possibly loose) bound for sums."""
        return self._bound(s, t, want_sup=True)

    def inf_on(self, s: float, t: float) -> float:
        """Lower bound over [s, t]; exact for primitives."""
        return self._bound(s, t, want_sup=False)

    def _bound(self, s: float, t: float, want_sup: bool) -> float:
        if s < 0.0 or t < s:
            raise ValueError(f"need 0 <= s <= t, got [{s}, {t}]")
        pick = max if want_sup else min
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "piecewise-constant":
            bp = self.breakpoints
            js = int(np.searchsorted(bp, s, side="right")) - 1
            je = int(np.searchsorted(bp, t, side="right")) - 1
            return pick(self.params[js:je + 1])
        if self.kind == "piecewise-linear":
            cand = [self.value(s), self.value(t)]
            cand += [self.params[j] for j, b in enumerate(self.breakpoints) if s < b < t]
            return pick(cand)
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            cand = [self.value(s), self.value(t)]
            if b != 0.0 and w > 0.0:
                # interior extrema where cos(w u + p) = 0
                m_lo = math.ceil((w * s + p) / math.pi - 0.5)
                m_hi = math.floor((w * t + p) / math.pi - 0.5)
                if m_lo <= m_hi:
                    # extrema alternate; checking one of each parity suffices
                    for m in (m_lo, m_lo + 1):
                        if m > m_hi:
                            break
                        cand.append(a + b * math.sin(math.pi * (m + 0.5)))
            return pick(cand)
        return sum(term._bound(s, t, want_sup) for term in self.terms)

    # -- positivity certification ----------------------------------------

    def certify_nonnegative(self, s: float, t: float, name: str = "rate",
                            max_depth: int = 40) -> None:
        """Prove f >= 0 on [s, t] by interval refinement, or raise a
        ValueError naming an offending time."""
        tol = 1e-12 * max(1.0, abs(self.sup_on(s, t)))
        stack = [(s, t, 0)]
        while stack:
            lo, hi, depth = stack.pop()
            if self.inf_on(lo, hi) >= -tol:
                continue
            if self.sup_on(lo, hi) < -tol:
                raise ValueError(
                    f"{name} is negative near t={lo:.6g} "
                    f"(value {self.value(lo):.6g})")
            mid = 0.5 * (lo + hi)
            for u in (lo, mid, hi):
                if self.value(u) < -tol:
                    raise ValueError(
                        f"{name} is negative at t={u:.6g} "
                        f"(value {self.value(u):.6g})")
            if depth >= max_depth:
                raise ValueError(
                    f"{name}: could not certify nonnegativity on "
                    f"[{lo:.6g}, {hi:.6g}]")
            stack.append((lo, mid, depth + 1))
            stack.append((mid, hi, depth + 1))

    # -- derivative bound (for locating server-count jumps) --------------

    def derivative_bound(self, s: float, t: float) -> float:
        """Upper bound on |f'| over smooth pieces of [s, t].  Piecewise
        jumps are not derivatives; their breakpoints are handled
        separately by callers."""
        if self.kind in ("constant", "piecewise-constant"):
            return 0.0
        if self.kind == "piecewise-linear":
            bp, v = self.breakpoints, self.params
            slopes = [
                abs((v[j + 1] - v[j]) / (bp[j + 1] - bp[j]))
                for j in range(len(bp) - 1)
                if bp[j] < t and bp[j + 1] > s
            ]
            return max(slopes, default=0.0)
        if self.kind == "sinusoid":
            a, b, w, p = self.params
            return abs(b) * w
        return sum(term.derivative_bound(s, t) for term in self.terms)

    def explicit_breakpoints(self) -> tuple[float, ...]:
        """All piecewise breakpoints of the function (kink/jump times)."""
        if self.kind in ("piecewise-constant", "piecewise-linear"):
            return self.breakpoints
        if self.kind == "sum":
            out: set[float] = set()
            for term in self.terms:
                out.update(term.explicit_breakpoints())
            return tuple(sorted(out))
        return ()

    # -- kernel packing ---------------------------------------------------

    def pack(self) -> PackedRate:
        kinds: list[int] = []
        coef: list[tuple[float, float, float, float]] = []
        nodes_t: list[float] = []
        nodes_v: list[float] = []
        off = [0]

        def emit(f: RateFunction) -> None:
            if f.kind == "sum":
                for term in f.terms:
                    emit(term)
                return
            kinds.append(_KIND_NAMES[f.kind])
            if f.kind == "constant":
                coef.append((f.params[0], 0.0, 0.0, 0.0))
            elif f.kind == "sinusoid":
                coef.append(f.params)
            else:
                coef.append((0.0, 0.0, 0.0, 0.0))
                nodes_t.extend(f.breakpoints)
                nodes_v.extend(f.params)
            off.append(len(nodes_t))

        emit(self)
        return PackedRate(
            np.array(kinds, dtype=np.int64),
            np.array(coef, dtype=np.float64).reshape(len(kinds), 4),
            np.array(off, dtype=np.int64),
            np.array(nodes_t, dtype=np.float64),
            np.array(nodes_v, dtype=np.float64),
        )

    # -- config round-trip -------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "sum":
            d["terms"] = [t.to_dict() for t in self.terms]
        else:
            d["params"] = list(self.params)
            if self.breakpoints:
                d["breakpoints"] = list(self.breakpoints)
        if self.signed:
            d["signed"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateFunction":
        kind = d.get("kind")
        signed = bool(d.get("signed", False))
        if kind == "sum":
            # a top-level signed flag is inherited by terms that omit it
            return cls.sum_of([
                cls.from_dict({**x, "signed": x.get("signed", signed)})
                for x in d["terms"]
            ])
        params = d.get("params", [])
        needed = {"constant": 1, "piecewise-constant": 1,
                  "piecewise-linear": 2, "sinusoid": 3}.get(kind)
        if needed is None:
            raise ValueError(f"unknown rate function kind {kind!r}")
        if len(params) < needed:
            raise ValueError(f"{kind} rate needs at least {needed} params, "
                             f"got {params!r}")
        if kind == "constant":
            return cls.constant(params[0], signed=signed)
        if kind == "piecewise-constant":
            return cls.piecewise_constant(d.get("breakpoints", []), params,
                                          signed=signed)
        if kind == "piecewise-linear":
            return cls.piecewise_linear(d.get("breakpoints", []), params,
                                        signed=signed)
        phase = params[3] if len(params) > 3 else 0.0
        return cls.sinusoid(params[0], params[1], params[2], phase, signed=signed)


def pack_pool(functions: Sequence[RateFunction]):
    """Pack several functions into one shared arena for the kernels.

    Returns (kinds, coef, off, node_t, node_v, fstart) where function i
    owns terms fstart[i]:fstart[i+1].
    """
    packs = [f.pack() for f in functions]
    fstart = np.zeros(len(packs) + 1, dtype=np.int64)
    node_base = 0
    kinds, coefs, offs, nts, nvs = [], [], [], [], []
    for i, p in enumerate(packs):
        fstart[i + 1] = fstart[i] + len(p.kinds)
        kinds.append(p.kinds)
        coefs.append(p.coef)
        offs.append(p.off[:-1] + node_base)
        nts.append(p.node_t)
        nvs.append(p.node_v)
        node_base += len(p.node_t)
    offs.append(np.array([node_base], dtype=np.int64))
    return (
        np.concatenate(kinds) if kinds else np.zeros(0, np.int64),
        np.concatenate(coefs) if coefs else np.zeros((0, 4)),
        np.concatenate(offs),
        np.concatenate(nts) if nts else np.zeros(0),
        np.concatenate(nvs) if nvs else np.zeros(0),
        fstart,
    )


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ServerCount:
    """Integer server-count process K_t = max(1, round(n*k_t + sqrt(n)*gamma_t)).

    ``profile`` is the real-valued function whose half-integer crossings are
    the jump times of K.
    """

    profile: RateFunction
    n: int

    def value(self, t: float) -> int:
        return max(1, round_half_up(self.profile.value(t)))

    def values(self, ts: np.ndarray) -> np.ndarray:
        return np.maximum(1, np.floor(self.profile.values(ts) + 0.5)).astype(np.int64)

    def bounds_on(self, s: float, t: float) -> tuple[int, int]:
        lo = max(1, round_half_up(self.profile.inf_on(s, t)))
        hi = max(1, round_half_up(self.profile.sup_on(s, t)))
        return lo, hi

    def is_step(self) -> bool:
        """True when the profile is piecewise constant, so jumps happen
        only at explicit breakpoints."""
        def flat(f: RateFunction) -> bool:
            if f.kind in ("constant", "piecewise-constant"):
                return True
            if f.kind == "sum":
                return all(flat(t) for t in f.terms)
            return False
        return flat(self.profile)

    def jump_times(self, s: float, t: float) -> np.ndarray:
        """Jump times of K in (s, t), sorted.

        Explicit breakpoints are checked directly.  On smooth pieces the
        profile is scanned with a step small enough that K can change by at
        most one level per step (derivative bound), and each level change
        is bisected to ~1e-12 absolute in time.
        """
        if t <= s:
            return np.zeros(0)
        jumps: list[float] = []
        seams = [s] + [b for b in self.profile.explicit_breakpoints() if s < b < t] + [t]
        for lo, hi in zip(seams, seams[1:]):
            if self.value(lo) != self.value(max(s, np.nextafter(lo, -np.inf))) and lo != s:
                jumps.append(lo)
            dbound = self.profile.derivative_bound(lo, hi)
            if dbound == 0.0:
                continue
            step = 0.4 / dbound
            m = int(math.ceil((hi - lo) / step)) + 1
            grid = np.linspace(lo, hi, m + 1)
            kv = self.values(grid)
            for j in np.nonzero(np.diff(kv))[0]:
                a, b = grid[j], grid[j + 1]
                ka = kv[j]
                for _ in range(60):
                    mid = 0.5 * (a + b)
                    if self.value(mid) == ka:
                        a = mid
                    else:
                        b = mid
                jumps.append(b)
        return np.array(sorted(jumps))


@dataclass(frozen=True)
class ScalingScheme:
    """Limit data from which every prelimit system is derived."""

    q0: float
    x0: float
    lam: RateFunction
    alpha: RateFunction
    k: RateFunction
    gamma: RateFunction
    mu: RateFunction
    theta: RateFunction

    def __post_init__(self) -> None:
        if self.q0 < 0.0:
            raise ValueError(f"q0 must be >= 0, got {self.q0}")
        for name in ("lam", "k", "mu", "theta"):
            if getattr(self, name).signed:
                raise ValueError(f"{name} must be an unsigned (positive) rate")

    @classmethod
    def constant(cls, q0: float, x0: float, lam: float, alpha: float,
                 k: float, gamma: float, mu: float, theta: float) -> "ScalingScheme":
        """Convenience builder for the constant-rate model."""
        c = RateFunction.constant
        s = lambda v: RateFunction.constant(v, signed=True)
        return cls(q0, x0, c(lam), s(alpha), c(k), s(gamma), c(mu), c(theta))


class PrelimitSystem(NamedTuple):
    lam_n: RateFunction
    K_n: ServerCount
    Q0_n: int


def prelimit(scheme: ScalingScheme, n: int, horizon: float) -> PrelimitSystem:
    """Build the n-th system's data and certify its arrival rate on the horizon.

    Raises ValueError naming an offending time if
    ``n*lambda_t + sqrt(n)*alpha_t`` dips negative anywhere on [0, horizon].
    """
    if n < 1:
        raise ValueError(f"system index n must be >= 1, got {n}")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    rt = math.sqrt(n)
    lam_n = scheme.lam.scaled(float(n)) + scheme.alpha.scaled(rt)
    lam_n.certify_nonnegative(0.0, horizon, name=f"lambda^n (n={n})")
    profile = scheme.k.scaled(float(n)) + scheme.gamma.scaled(rt)
    q0n = max(0, round_half_up(n * scheme.q0 + rt * scheme.x0))
    return PrelimitSystem(lam_n, ServerCount(profile, n), q0n)
