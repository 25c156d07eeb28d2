import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlimits.stats import (
    BDChain,
    EmpiricalSample,
    bd_stationary,
    kolmogorov_sf,
    ks_statistic,
    moments,
    tv_distance,
)


def std_normal_cdf(x):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2)))


class TestKs:
    def test_single_point_at_median(self):
        d, _ = ks_statistic(EmpiricalSample(np.array([0.0])), std_normal_cdf)
        assert d == pytest.approx(0.5, abs=1e-15)

    def test_three_point_oracle(self):
        # brute-force EDF supremum over {-1, 0, 1} vs the standard normal
        xs = np.array([-1.0, 0.0, 1.0])
        phi = std_normal_cdf(xs)
        oracle = max(max(phi[i] - i / 3, (i + 1) / 3 - phi[i]) for i in range(3))
        assert oracle == pytest.approx(0.1746780794018763, abs=1e-15)
        d, _ = ks_statistic(EmpiricalSample(xs), std_normal_cdf)
        assert d == pytest.approx(oracle, abs=1e-15)

    def test_calibration_under_the_null(self):
        # seeded trials of 10^4 std normal draws against their own cdf
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            sample = EmpiricalSample(rng.standard_normal(10000))
            _, p = ks_statistic(sample, std_normal_cdf)
            hits += p >= 0.01
        assert hits >= 98

    def test_d_in_unit_interval_and_permutation_invariant(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=200)
        d1, p1 = ks_statistic(EmpiricalSample(x), std_normal_cdf)
        d2, p2 = ks_statistic(EmpiricalSample(rng.permutation(x)), std_normal_cdf)
        assert 0.0 <= d1 <= 1.0
        assert (d1, p1) == (d2, p2)

    def test_errors(self):
        with pytest.raises(ValueError):
            ks_statistic(EmpiricalSample(np.zeros(0)), std_normal_cdf)
        with pytest.raises(ValueError):
            ks_statistic(EmpiricalSample(np.ones(3), np.ones(3)), std_normal_cdf)

    def test_sf_bounds(self):
        assert kolmogorov_sf(0.0) == 1.0
        assert kolmogorov_sf(10.0) < 1e-12
        ys = np.linspace(0.05, 3.0, 60)
        vals = [kolmogorov_sf(y) for y in ys]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestMoments:
    def test_degenerate(self):
        m = moments(EmpiricalSample(np.array([1.0, 1.0, 1.0])))
        assert (m.mean, m.variance) == (1.0, 0.0)

    def test_two_points_unbiased(self):
        m = moments(EmpiricalSample(np.array([0.0, 2.0])))
        assert (m.mean, m.variance) == (1.0, 2.0)

    def test_calibration(self):
        rng = np.random.default_rng(8)
        m = moments(EmpiricalSample(rng.normal(3.0, 2.0, 10000)))
        assert abs(m.mean - 3.0) <= 4 * m.se_mean
        assert abs(m.variance - 4.0) <= 4 * m.se_variance

    def test_needs_two(self):
        with pytest.raises(ValueError):
            moments(EmpiricalSample(np.array([1.0])))


class TestBirthDeath:
    def test_uniform_when_balanced(self):
        j = 7
        chain = BDChain(birth=np.ones(j + 1),
                        death=np.concatenate(([0.0], np.ones(j))))
        pi = bd_stationary(chain)
        assert np.allclose(pi, 1.0 / (j + 1))

    def test_truncated_mm1_geometric(self):
        j = 40
        chain = BDChain(birth=np.full(j + 1, 0.5),
                        death=np.concatenate(([0.0], np.ones(j))))
        pi = bd_stationary(chain)
        expected = 0.5 ** np.arange(j + 1)
        expected /= expected.sum()
        assert np.allclose(pi, expected, rtol=1e-12)

    def test_erlang_a_against_linear_solve(self):
        chain = BDChain.erlang_a(2.0, 1.0, 1.0, 2)
        pi = bd_stationary(chain)
        # oracle: solve pi Q = 0 directly on the truncated generator
        j = len(pi)
        gen = np.zeros((j, j))
        for s in range(j):
            if s + 1 < j:
                gen[s, s + 1] = chain.birth[s]
            if s > 0:
                gen[s, s - 1] = chain.death[s]
            gen[s, s] = -gen[s].sum()
        a = np.vstack([gen.T, np.ones(j)])
        b = np.concatenate([np.zeros(j), [1.0]])
        ref, *_ = np.linalg.lstsq(a, b, rcond=None)
        assert np.abs(pi - ref).max() < 1e-10

    def test_detailed_balance(self):
        chain = BDChain.erlang_a(4.0, 1.0, 2.0, 3)
        pi = bd_stationary(chain)
        lhs = pi[:-1] * chain.birth[:-1]
        rhs = pi[1:] * chain.death[1:]
        keep = rhs > 0
        assert np.abs(lhs[keep] / rhs[keep] - 1.0).max() < 1e-12

    def test_truncation_mass(self):
        chain = BDChain.erlang_a(2.0, 1.0, 1.0, 2)
        pi = bd_stationary(chain)
        assert pi[-1] < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            BDChain(birth=np.ones(3), death=np.ones(3))  # death[0] != 0
        with pytest.raises(ValueError):
            BDChain(birth=np.array([1.0, 0.0, 1.0]),
                    death=np.array([0.0, 1.0, 1.0]))


class TestTvDistance:
    def test_examples(self):
        assert tv_distance(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
        assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
        assert tv_distance(np.array([0.5, 0.5]), np.array([0.75, 0.25])) == 0.25

    @given(st.integers(2, 8), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_metric_properties(self, size, seed):
        rng = np.random.default_rng(seed)
        p, q, r = (rng.dirichlet(np.ones(size)) for _ in range(3))
        assert tv_distance(p, q) == pytest.approx(tv_distance(q, p))
        assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
        assert 0.0 <= tv_distance(p, q) <= 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            tv_distance(np.array([1.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            tv_distance(np.array([0.9]), np.array([1.0]))
