import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qlimits import _kernels
from qlimits.rates import (
    RateFunction,
    ScalingScheme,
    pack_pool,
    prelimit,
)

C = RateFunction.constant


def random_function(rng) -> RateFunction:
    """A random member of the algebra (possibly a sum)."""
    def primitive():
        kind = rng.integers(0, 4)
        if kind == 0:
            return C(rng.uniform(0.1, 5.0))
        if kind == 1:
            m = rng.integers(1, 5)
            bp = np.concatenate(([0.0], np.sort(rng.uniform(0.1, 9.0, m))))
            return RateFunction.piecewise_constant(bp, rng.uniform(0.1, 5.0, m + 1))
        if kind == 2:
            m = rng.integers(2, 6)
            bp = np.concatenate(([0.0], np.sort(rng.uniform(0.1, 9.0, m - 1))))
            return RateFunction.piecewise_linear(bp, rng.uniform(0.1, 5.0, m))
        a = rng.uniform(0.5, 3.0)
        return RateFunction.sinusoid(a, rng.uniform(0.0, a), rng.uniform(0.1, 4.0),
                                     rng.uniform(0.0, 2 * math.pi))
    f = primitive()
    for _ in range(rng.integers(0, 3)):
        f = f + primitive()
    return f


class TestValue:
    def test_constant(self):
        assert C(2.0).value(5.0) == 2.0

    def test_sinusoid(self):
        f = RateFunction.sinusoid(1.0, 0.5, 1.0)
        assert f.value(math.pi / 2) == pytest.approx(1.5, abs=1e-15)

    def test_piecewise_right_continuous(self):
        f = RateFunction.piecewise_constant([0.0, 1.0], [1.0, 3.0])
        assert f.value(1.0) == 3.0
        assert f.value(0.999999) == 1.0

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            C(1.0).value(-0.1)

    def test_values_matches_value(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            f = random_function(rng)
            ts = rng.uniform(0.0, 12.0, 50)
            vec = f.values(ts)
            for t, v in zip(ts, vec):
                assert v == pytest.approx(f.value(t), rel=1e-12, abs=1e-12)


class TestIntegral:
    def test_constant(self):
        assert C(2.0).integral(0.0, 3.0) == pytest.approx(6.0)

    def test_full_period_sine(self):
        f = RateFunction.sinusoid(1.0, 1.0, 1.0)
        assert f.integral(0.0, 2 * math.pi) == pytest.approx(2 * math.pi, rel=1e-12)

    def test_trapezoid(self):
        f = RateFunction.piecewise_linear([0.0, 2.0], [1.0, 3.0])
        assert f.integral(0.0, 2.0) == pytest.approx(4.0)

    def test_reversed_interval_rejected(self):
        with pytest.raises(ValueError):
            C(1.0).integral(2.0, 1.0)

    def test_matches_quadrature(self):
        # closed forms against adaptive quadrature on 100 random intervals
        rng = np.random.default_rng(7)
        for _ in range(100):
            f = random_function(rng)
            s = rng.uniform(0.0, 8.0)
            t = s + rng.uniform(0.01, 4.0)
            ref, _ = quad(f.value, s, t, limit=400,
                          points=[b for b in f.explicit_breakpoints() if s < b < t])
            assert f.integral(s, t) == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_additive_over_adjacent_intervals(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            f = random_function(rng)
            s, m, t = np.sort(rng.uniform(0.0, 10.0, 3))
            whole = f.integral(s, t)
            parts = f.integral(s, m) + f.integral(m, t)
            assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)


class TestBounds:
    def test_sinusoid_sup(self):
        f = RateFunction.sinusoid(1.0, 0.5, 1.0)
        assert f.sup_on(0.0, 2 * math.pi) == pytest.approx(1.5)

    def test_pconst_sup_before_jump(self):
        f = RateFunction.piecewise_constant([0.0, 1.0], [1.0, 3.0])
        assert f.sup_on(0.0, 0.5) == 1.0
        assert f.sup_on(0.0, 1.0) == 3.0  # closed interval reaches the jump

    def test_plinear_sup(self):
        f = RateFunction.piecewise_linear([0.0, 2.0], [1.0, 3.0])
        assert f.sup_on(0.0, 2.0) == 3.0

    def test_sup_never_underestimates(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            f = random_function(rng)
            s = rng.uniform(0.0, 9.0)
            t = s + rng.uniform(0.0, 4.0)
            u = rng.uniform(s, t)
            assert f.sup_on(s, t) >= f.value(u) - 1e-12
            assert f.inf_on(s, t) <= f.value(u) + 1e-12


class TestValidation:
    def test_nonpositive_constant_rejected(self):
        with pytest.raises(ValueError):
            C(0.0)
        with pytest.raises(ValueError):
            C(-1.0)

    def test_signed_allows_negative(self):
        assert C(-1.0, signed=True).value(0.0) == -1.0

    def test_sinusoid_dipping_negative_rejected(self):
        with pytest.raises(ValueError):
            RateFunction.sinusoid(1.0, 1.5, 1.0)

    def test_touching_zero_allowed(self):
        # 1 + sin(t) is a legitimate arrival rate
        RateFunction.sinusoid(1.0, 1.0, 1.0)

    def test_breakpoints_must_increase(self):
        with pytest.raises(ValueError):
            RateFunction.piecewise_constant([0.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_immutable(self):
        f = C(1.0)
        with pytest.raises(AttributeError):
            f.params = (2.0,)


class TestPrelimit:
    def test_plain_scaling(self):
        sch = ScalingScheme.constant(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0)
        pre = prelimit(sch, 100, 10.0)
        assert pre.lam_n.value(3.0) == 100.0
        assert pre.K_n.value(3.0) == 100
        assert pre.Q0_n == 100

    def test_drifted_scaling(self):
        sch = ScalingScheme.constant(1.0, 2.0, 1.0, 0.5, 1.0, 0.0, 1.0, 1.0)
        pre = prelimit(sch, 100, 10.0)
        assert pre.lam_n.value(0.0) == pytest.approx(105.0)
        assert pre.Q0_n == 120

    def test_small_system(self):
        sch = ScalingScheme.constant(0.5, 0.0, 1.0, -0.5, 1.0, 1.0, 1.0, 1.0)
        pre = prelimit(sch, 4, 10.0)
        assert pre.lam_n.value(1.0) == pytest.approx(3.0)
        assert pre.K_n.value(1.0) == 6
        assert pre.Q0_n == 2

    def test_negative_arrival_rate_names_time(self):
        sch = ScalingScheme.constant(1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError, match="t="):
            prelimit(sch, 1, 5.0)

    def test_consistency_bounds(self):
        # |K/n - k| <= (|gamma|+1)/sqrt(n) and |sqrt(n)(K/n - k) - gamma| <= 1/sqrt(n)
        k = RateFunction.sinusoid(1.0, 0.25, 0.5)
        gamma = RateFunction.sinusoid(0.0, 0.8, 1.3, signed=True)
        sch = ScalingScheme(q0=1.0, x0=0.0, lam=C(1.0), alpha=C(0.0, signed=True),
                            k=k, gamma=gamma, mu=C(1.0), theta=C(1.0))
        ts = np.linspace(0.0, 20.0, 801)
        for n in (25, 400, 10000):
            pre = prelimit(sch, n, 20.0)
            kn = pre.K_n.values(ts) / n
            kv = k.values(ts)
            gv = gamma.values(ts)
            rt = math.sqrt(n)
            assert np.all(np.abs(kn - kv) <= (np.abs(gv) + 1.0) / rt + 1e-12)
            assert np.all(np.abs(rt * (kn - kv) - gv) <= 1.0 / rt + 1e-12)

    def test_bad_args(self):
        sch = ScalingScheme.constant(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            prelimit(sch, 0, 1.0)
        with pytest.raises(ValueError):
            prelimit(sch, 1, 0.0)


class TestServerCount:
    def test_jump_times_match_brute_scan(self):
        sch = ScalingScheme(
            q0=1.0, x0=0.0, lam=C(1.0), alpha=C(0.0, signed=True),
            k=RateFunction.sinusoid(1.0, 0.3, 0.7), gamma=C(0.0, signed=True),
            mu=C(1.0), theta=C(1.0))
        pre = prelimit(sch, 40, 12.0)
        jumps = pre.K_n.jump_times(0.0, 12.0)
        ts = np.linspace(0.0, 12.0, 400001)
        kv = pre.K_n.values(ts)
        brute = ts[1:][np.diff(kv) != 0]
        assert len(jumps) == len(brute)
        assert np.abs(jumps - brute).max() < 1e-4
        # every located jump really changes K
        for j in jumps:
            assert pre.K_n.value(j - 1e-9) != pre.K_n.value(j + 1e-9)

    def test_step_profile_is_explicit(self):
        sch = ScalingScheme(
            q0=1.0, x0=0.0, lam=C(1.0), alpha=C(0.0, signed=True),
            k=RateFunction.piecewise_constant([0.0, 2.0], [1.0, 1.5]),
            gamma=C(0.0, signed=True), mu=C(1.0), theta=C(1.0))
        pre = prelimit(sch, 10, 5.0)
        assert pre.K_n.is_step()
        assert list(pre.K_n.jump_times(0.0, 5.0)) == [2.0]
        assert pre.K_n.value(1.9) == 10
        assert pre.K_n.value(2.0) == 15


class TestPacking:
    def test_pool_matches_python_eval(self):
        rng = np.random.default_rng(17)
        fns = [random_function(rng) for _ in range(4)]
        kinds, coef, off, nt, nv, fstart = pack_pool(fns)
        for i, f in enumerate(fns):
            for t in rng.uniform(0.0, 12.0, 40):
                got = _kernels._pool_value(kinds, coef, off, nt, nv,
                                           fstart[i], fstart[i + 1], float(t))
                assert got == pytest.approx(f.value(t), rel=1e-12, abs=1e-12)
            for _ in range(20):
                s = rng.uniform(0.0, 9.0)
                t = s + rng.uniform(0.0, 3.0)
                hi = _kernels._pool_bound(kinds, coef, off, nt, nv,
                                          fstart[i], fstart[i + 1], s, t, True)
                lo = _kernels._pool_bound(kinds, coef, off, nt, nv,
                                          fstart[i], fstart[i + 1], s, t, False)
                assert hi == pytest.approx(f.sup_on(s, t), rel=1e-12, abs=1e-12)
                assert lo == pytest.approx(f.inf_on(s, t), rel=1e-12, abs=1e-12)


class TestConfigRoundTrip:
    @given(st.sampled_from(["constant", "piecewise-constant", "piecewise-linear",
                            "sinusoid", "sum"]),
           st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip(self, kind, seed):
        rng = np.random.default_rng(seed)
        f = random_function(rng)
        g = RateFunction.from_dict(f.to_dict())
        ts = rng.uniform(0.0, 10.0, 25)
        assert np.allclose(f.values(ts), g.values(ts), rtol=0, atol=0)
