import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlqmcfe.field import (DecaySequences, Domain, SineBasis, check_bounds, derive_sequences,
                           evaluate_coeff, make_field, summability_report)
from mlqmcfe.wavelet import HaarBasis1D


@pytest.fixture(scope="module")
def sine():
    return make_field(SineBasis(0.2, 2.0))


@pytest.fixture(scope="module")
def haar():
    return make_field(HaarBasis1D(2, 6, c=0.3, theta=1.0))


class TestEvaluate:
    def test_zero_parameters_give_mean(self, sine):
        x = np.linspace(0, 1, 7)
        assert np.allclose(evaluate_coeff(sine, x, np.zeros(5)), 1.0)

    def test_haar_level_zero_indicator(self, haar):
        assert evaluate_coeff(haar, 0.5, [0.3, 0.0]) == pytest.approx(1.3)

    def test_sine_single_term(self, sine):
        assert evaluate_coeff(sine, 0.5, [0.5]) == pytest.approx(1.1, abs=1e-15)

    def test_rejects_parameters_outside_cube(self, sine):
        with pytest.raises(ValueError):
            evaluate_coeff(sine, 0.5, [0.6])

    def test_rejects_points_outside_domain(self, sine):
        with pytest.raises(ValueError):
            evaluate_coeff(sine, 1.5, [0.1])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=8),
           st.floats(0.0, 1.0), st.integers(0, 7), st.floats(-0.5, 0.5))
    def test_affine_in_each_parameter(self, y, x, j, t):
        field = make_field(SineBasis(0.2, 2.0))
        y = np.array(y)
        j = j % len(y)
        y2 = y.copy()
        y2[j] = t
        psi = field.basis.evaluate([x], len(y))[j, 0]
        diff = evaluate_coeff(field, x, y2) - evaluate_coeff(field, x, y)
        assert diff == pytest.approx((t - y[j]) * psi, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_bounds_hold_on_samples(self, seed):
        field = make_field(SineBasis(0.2, 2.0))
        assert check_bounds(field, 32, n_samples=50, rng=np.random.default_rng(seed))


class TestSequences:
    def test_sine_example_bbar(self):
        field = make_field(SineBasis(0.2, 2.0), a_min=0.8)
        seqs = derive_sequences(field, 0.5, 0.5, kappa=0.5, B_const=0.25, C_t=1.0, s_max=4)
        assert seqs.b[1] == pytest.approx(0.0625)
        # hand substitution: 0.0625 + 0.5 (0.2 pi / 2 + 0.25 * 0.05)
        assert seqs.b_bar[1] == pytest.approx(0.22582963267948966, rel=1e-14)

    def test_indicator_norms_over_a_min(self):
        field = make_field(HaarBasis1D(2, 3, c=0.4, theta=1.0), mean=4.0, a_min=2.0)
        seqs = derive_sequences(field, 0.5, 0.5, s_max=6)
        assert np.allclose(seqs.b, field.basis.sup_norms(6) / 2.0)

    def test_degenerate_parameters(self):
        field = make_field(HaarBasis1D(2, 3, c=0.4, theta=1.0))
        seqs = derive_sequences(field, 0.7, 0.7, kappa=1.0, B_const=0.0, s_max=6)
        assert np.array_equal(seqs.b_bar, seqs.b)
        assert np.array_equal(seqs.beta, seqs.b)

    def test_p_above_q_rejected(self, sine):
        with pytest.raises(ValueError):
            derive_sequences(sine, 0.8, 0.6)

    def test_gradient_requirement_for_haar(self, haar):
        with pytest.raises(ValueError):
            derive_sequences(haar, 0.5, 0.5, s_max=4, require_gradients=True)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(0.2, 0.9), st.floats(0.0, 0.5))
    def test_monotone_in_kappa_and_dominance(self, k1, k2, p, dq):
        field = make_field(SineBasis(0.2, 2.0))
        q = min(p + dq, 1.0)
        lo, hi = sorted((k1, k2))
        a = derive_sequences(field, p, q, kappa=lo, s_max=32)
        b = derive_sequences(field, p, q, kappa=hi, s_max=32)
        assert np.all(b.b_bar >= a.b_bar)
        for s in (a, b):
            assert np.all(s.b_bar >= s.b)
            assert np.all(s.beta >= s.b_bar)
            assert np.all(s.beta >= s.b ** (p / q))
            assert np.all((s.beta == s.b_bar) | (s.beta == s.b ** (p / q)))


class TestSummability:
    def test_partial_sum_of_inverse_squares(self):
        # b_j = j^-2 requires a_min = 1 and psi norms j^-2
        field = make_field(SineBasis(1.0, 2.0), mean=3.0, a_min=1.0, a_max=5.0)
        seqs = derive_sequences(field, 0.6, 0.6, s_max=10 ** 4)
        rep = summability_report(seqs)
        # brute-force oracle: sum_{j <= 10^4} j^-1.2
        assert rep.sum_b_p == pytest.approx(4.799143769254668, rel=1e-12)
        assert rep.passed

    def test_envelope_tail(self):
        field = make_field(SineBasis(1.0, 2.0), mean=3.0, a_min=1.0, a_max=5.0)
        seqs = derive_sequences(field, 0.6, 0.6, s_max=100)
        rep = summability_report(seqs, envelope=(1.0, 2.0))
        direct = float(np.sum(np.arange(101, 10 ** 6, dtype=float) ** -1.2))
        assert rep.tail_bounds["b_p"] >= direct

    def test_zero_field(self):
        field = make_field(SineBasis(0.0, 2.0))
        seqs = derive_sequences(field, 0.5, 1.0, B_const=0.0, s_max=10)
        rep = summability_report(seqs)
        assert rep.sum_b_p == rep.sum_bbar_q == 0.0
        assert rep.passed

    def test_q1_smallness_flag(self):
        # bbar_j = 1/j: harmonic sums first exceed sqrt(6) at j = 6
        h = 1.0 / np.arange(1, 21)
        seqs = DecaySequences(b=h, b_bar=h, beta=h, p=1.0, q=1.0, kappa=1.0, B_const=0.0, C_t=1.0)
        rep = summability_report(seqs)
        assert rep.small_q1_ok is False
        assert rep.small_q1_exceeded_at == 6
        assert sum(1.0 / j for j in range(1, 6)) < math.sqrt(6) < sum(1.0 / j for j in range(1, 7))


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain(3, 1.0)
    assert Domain(2, 1.0).volume == 1.0
