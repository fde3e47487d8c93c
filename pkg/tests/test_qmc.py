import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlqmcfe.qmc import (LatticeRule, PodWeights, candidate_errors, cbc_construct, generate_points, is_prime,
                         lambda_q, next_prime, pod_weights, rho, shift_avg_wce, zeta)


def series_zeta(x, terms=10 ** 6):
    # direct partial sum plus the integral tail
    k = np.arange(1, terms + 1, dtype=float)
    return float(np.sum(k ** -x)) + terms ** (1 - x) / (x - 1) - 0.5 * terms ** -x


def subset_wce(z, N, w):
    """e^2 by enumerating every nonempty subset (independent of the accumulator)."""
    s = len(z)
    i = np.arange(N)
    total = 0.0
    for k in range(1, s + 1):
        for u in itertools.combinations(range(s), k):
            prod = np.ones(N)
            for j in u:
                t = (i * z[j] % N) / N
                prod *= t * t - t + 1 / 6
            total += w.weight(u) * prod.mean()
    return total


class TestRho:
    def test_rho_one(self):
        assert rho(1.0) == pytest.approx(1 / 6, rel=1e-14)

    def test_rho_three_quarters(self):
        assert rho(0.75) == pytest.approx(2 * series_zeta(1.5) / (2 * math.pi ** 2) ** 0.75, rel=1e-12)
        assert rho(0.75) == pytest.approx(0.557915294049154, rel=1e-12)

    @pytest.mark.parametrize("x", [1.1, 1.5, 2.0, 3.0, 7.5])
    def test_zeta_against_series(self, x):
        assert zeta(x) == pytest.approx(series_zeta(x), rel=1e-11)

    def test_rejects_half(self):
        with pytest.raises(ValueError):
            rho(0.5)


class TestLambda:
    def test_values(self):
        assert lambda_q(1.0) == 1.0
        assert lambda_q(0.8) == pytest.approx(2 / 3)
        assert lambda_q(0.5, 0.1) == pytest.approx(1 / 1.8)

    @pytest.mark.parametrize("q,delta", [(0.0, 0.1), (1.2, 0.1), (0.5, 0.5), (0.5, 0.0)])
    def test_invalid(self, q, delta):
        with pytest.raises(ValueError):
            lambda_q(q, delta)


class TestWeights:
    def test_empty_set(self):
        w = pod_weights([0.5, 0.25], 1.0)
        assert w.weight([]) == 1.0 and w.log_Gamma[0] == 0.0

    def test_singleton_and_pair_at_lambda_one(self):
        beta = np.array([0.5, 0.25, 0.1])
        w = pod_weights(beta, 1.0)
        for j in range(3):
            assert w.weight([j]) == pytest.approx(4 * math.sqrt(6) * beta[j], rel=1e-13)
        assert w.weight([0, 2]) == pytest.approx(120 * beta[0] * beta[2], rel=1e-13)

    def test_log_gamma_to_cap(self):
        w = pod_weights(np.full(4096, 0.1), 0.6)
        assert np.all(np.isfinite(w.log_Gamma))
        assert np.all(np.diff(w.log_Gamma) > 0)
        ref = (2 / 1.6) * (math.lgamma(4096 + 4) - math.log(6))
        assert w.log_Gamma[-1] == pytest.approx(ref, rel=1e-12)

    def test_cap_and_positivity(self):
        with pytest.raises(ValueError):
            pod_weights(np.ones(4097), 1.0)
        with pytest.raises(ValueError):
            pod_weights([0.1, 0.0], 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.01, 2.0), min_size=1, max_size=6), st.floats(0.51, 1.0), st.data())
    def test_pod_factorization(self, beta, lam, data):
        w = pod_weights(beta, lam)
        u = data.draw(st.sets(st.integers(0, len(beta) - 1), min_size=1))
        expo = 2 / (1 + lam)
        direct = (math.factorial(len(u) + 3) / 6 * math.prod(beta[j] / math.sqrt(rho(lam)) for j in u)) ** expo
        assert w.weight(sorted(u)) == pytest.approx(direct, rel=1e-12)


class TestPoints:
    def test_small_rule(self):
        rule = LatticeRule([2], 5)
        assert np.allclose(generate_points(rule, [0.0])[:, 0], [-0.1, 0.3, -0.3, 0.1, -0.5])

    def test_last_point_is_corner(self):
        rule = LatticeRule([1, 3, 7], 11)
        assert np.allclose(generate_points(rule, np.zeros(3))[-1], -0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0, exclude_max=True), min_size=3, max_size=3))
    def test_shift_periodicity_and_range(self, shift):
        rule = LatticeRule([1, 3, 7], 11)
        a = generate_points(rule, shift)
        b = generate_points(rule, np.array(shift) + 1.0)
        # compare on the torus: a shift within rounding of 1 may wrap to -1/2
        d = np.mod(a - b, 1.0)
        assert np.all(np.minimum(d, 1.0 - d) <= 1e-12)
        assert np.all(a >= -0.5) and np.all(a < 0.5)

    def test_invalid_vectors(self):
        with pytest.raises(ValueError):
            LatticeRule([0], 5)
        with pytest.raises(ValueError):
            LatticeRule([3], 9)

    def test_serialization(self, tmp_path):
        rule = LatticeRule([1, 4, 9], 13, lam=0.75)
        path = tmp_path / "z.txt"
        rule.save(path)
        assert path.read_text().splitlines()[0] == "3 13 0.75"
        back = LatticeRule.load(path)
        assert np.array_equal(back.z, rule.z) and back.N == 13 and back.lam == 0.75


class TestPrimes:
    def test_examples(self):
        assert next_prime(8) == 11 and next_prime(7) == 7
        sieve = np.ones(1100, dtype=bool)
        sieve[:2] = False
        for p in range(2, 34):
            sieve[p * p::p] = False
        assert next_prime(1000) == int(np.nonzero(sieve[1000:])[0][0]) + 1000 == 1009
        assert [n for n in range(60) if is_prime(n)] == list(np.nonzero(sieve[:60])[0])


class TestWorstCaseError:
    def test_one_dimension(self):
        for N in (5, 13, 101):
            w = pod_weights([0.3], 1.0)
            gamma = w.weight([0])
            assert shift_avg_wce(LatticeRule([1], N), w) == pytest.approx(gamma / (6 * N ** 2), rel=1e-12)

    def test_zero_weights(self):
        w = PodWeights(1.0, np.array([0.0, 1.0, 2.0]), np.zeros(2))
        assert shift_avg_wce(LatticeRule([1, 2], 7), w) == 0.0

    def test_small_enumeration(self):
        w = pod_weights([0.5, 0.25], 1.0)
        rule = LatticeRule([1, 1], 3)
        assert shift_avg_wce(rule, w) == pytest.approx(subset_wce([1, 1], 3, w), rel=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(1, 4), st.sampled_from([5, 7, 11, 31]))
    def test_scaling(self, c, s, N):
        w = pod_weights(np.linspace(0.9, 0.2, s), 0.8)
        rule = LatticeRule(np.arange(1, s + 1) % (N - 1) + 1, N)
        assert shift_avg_wce(rule, w.scaled(c)) == pytest.approx(c * shift_avg_wce(rule, w), rel=1e-12)


class TestCbc:
    def test_one_dimension_all_candidates_tie(self):
        w = pod_weights([0.7], 1.0)
        errs = candidate_errors(np.zeros(0, dtype=np.int64), 13, w)
        assert np.allclose(errs, errs[0], rtol=1e-13)

    def test_first_component_is_one(self):
        w = pod_weights([0.7], 1.0)
        for N in (5, 31, 1009):
            assert cbc_construct(1, N, w).z[0] == 1

    def test_two_dims_n5(self):
        w = pod_weights([0.5, 0.25], 1.0)
        rule = cbc_construct(2, 5, w)
        cands = [subset_wce([rule.z[0], c], 5, w) for c in range(1, 5)]
        assert rule.errors[1] == pytest.approx(min(cands), rel=1e-13)
        assert rule.z[1] == 1 + int(np.argmin(np.round(cands, 14)))

    @pytest.mark.parametrize("N", [5, 7, 11, 13, 31])
    def test_greedy_optimality(self, N):
        w = pod_weights([0.8, 0.5, 0.3], 0.7)
        rule = cbc_construct(3, N, w)
        for k in range(3):
            best = min(subset_wce(list(rule.z[:k]) + [c], N, w) for c in range(1, N))
            assert rule.errors[k] == pytest.approx(best, rel=1e-12)
        assert shift_avg_wce(rule, w) == pytest.approx(subset_wce(rule.z, N, w), rel=1e-13)

    def test_fast_matches_plain(self):
        w = pod_weights(np.arange(1, 17) ** -2.0, 0.8)
        for N in (101, 1009):
            a = cbc_construct(16, N, w, method="plain")
            b = cbc_construct(16, N, w, method="fast")
            assert np.array_equal(a.z, b.z)
            assert np.allclose(a.errors, b.errors, rtol=1e-10)

    def test_composite_rejected(self):
        with pytest.raises(ValueError):
            cbc_construct(2, 15, pod_weights([0.5, 0.5], 1.0))

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=5), st.sampled_from([7, 13, 29, 61]))
    def test_coprime_and_decreasing_error(self, beta, N):
        w = pod_weights(beta, 0.9)
        rule = cbc_construct(len(beta), N, w)
        assert all(math.gcd(int(z), N) == 1 for z in rule.z)
        assert np.all(rule.errors > 0)


class TestUnbiasedness:
    @pytest.mark.parametrize("s,N", [(4, 127), (8, 509)])
    def test_separable_polynomial(self, s, N):
        w = pod_weights(np.arange(1, s + 1) ** -2.0, 1.0)
        rule = cbc_construct(s, N, w)
        rng = np.random.default_rng(2024)
        base = generate_points(rule, np.zeros(s)) + 0.5
        vals = np.empty(2000)
        for r in range(vals.size):
            pts = np.mod(base + rng.random(s), 1.0)
            vals[r] = np.prod(pts, axis=1).mean()
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 0.5 ** s) <= 4 * se
