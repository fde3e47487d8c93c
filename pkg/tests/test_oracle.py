import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import zeta as hurwitz

from mlqmcfe.fem import make_mesh
from mlqmcfe.field import SineBasis, make_field
from mlqmcfe.oracle import (brute_force_wce, gauss_legendre_half, pod_weight_map, stechkin_tail,
                            tensor_quadrature, tensor_quadrature_reference,
                            verify_truncation_condition)
from mlqmcfe.qmc import LatticeRule, lambda_q, pod_weights, shift_avg_wce


class TestStechkin:
    def test_inverse_squares(self):
        b = np.arange(1, 10 ** 5 + 1, dtype=float) ** -2.0
        tail = 10 ** 5 ** -0.2 / 0.2  # integral bound on sum_{j > 1e5} j^-1.2
        bound = stechkin_tail(b, 0.6, 100, tail=tail)
        # sum_{j > 100} j^-2, from the Hurwitz zeta function
        exact = float(hurwitz(2.0, 101))
        assert exact == pytest.approx(0.00995016666333415, rel=1e-12)
        assert bound >= exact

    def test_doubling(self):
        b = np.arange(1, 200, dtype=float) ** -3.0
        p = 0.5
        r = 2 ** (1 / p - 1)
        assert stechkin_tail(b, p, 10) / stechkin_tail(b, p, 20) == pytest.approx(r, rel=1e-13)

    def test_single_term(self):
        # b = (1, 0, ...): min(1/r, 1) s^-r with r = 1/p - 1
        for p in (0.3, 0.5, 0.8):
            r = 1 / p - 1
            assert stechkin_tail([1.0], p, 4) == pytest.approx(min(1 / r, 1) * 4 ** -r, rel=1e-14)

    @pytest.mark.parametrize("b,p", [([0.1, 0.2], 0.5), ([-0.1], 0.5), ([0.1], 1.0), ([0.1], 0.0)])
    def test_invalid(self, b, p):
        with pytest.raises(ValueError):
            stechkin_tail(b, p, 3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60), st.floats(0.2, 0.9),
           st.integers(1, 50))
    def test_bound_holds(self, raw, p, s):
        b = np.sort(np.array(raw))[::-1]
        assert math.fsum(b[s:]) <= stechkin_tail(b, p, s) * (1 + 1e-12) + 1e-300


class TestTruncationCondition:
    def test_zero_beyond_s_prev(self):
        w = pod_weights(np.full(8, 0.3), 1.0)
        b = np.array([0.5, 0.3, 0.2, 0.1, 0, 0, 0, 0])
        chk = verify_truncation_condition(w, b, 4, 8, 0.5, 0.6)
        assert chk.left == 0.0 and chk.ratio == 0.0 and chk.right > 0

    def test_singleton_closed_form(self):
        # s_prev = 1, s_curr = 2: left = x_2 + 4 x_1 x_2 / Gamma_2 (orders 1 and 2)
        w = pod_weights([0.5, 0.4], 1.0)
        b = np.array([0.2, 0.1])
        x = b ** 2 / w.gamma
        G1, G2 = math.exp(w.log_Gamma[1]), math.exp(w.log_Gamma[2])
        chk = verify_truncation_condition(w, b, 1, 2, 0.5, 1.0, n=3)
        assert chk.left == pytest.approx(x[1] / G1 + 4 * x[0] * x[1] / G2, rel=1e-13)
        right = (24 ** 2 * (x[0] + x[1]) / G1 + 120 ** 2 * x[0] * x[1] / G2 + 36) * 1.0 ** -2
        assert chk.right == pytest.approx(right, rel=1e-13)

    def test_cubic_decay_ratio_bounded(self):
        j = np.arange(1, 1025, dtype=float)
        b = j ** -3.0
        w = pod_weights(b ** (0.4 / 0.6), lambda_q(0.6))
        ratios = [verify_truncation_condition(w, b, s, 2 * s, 0.4, 0.6).ratio for s in (8, 32, 128, 512)]
        assert max(ratios) <= 1.5 * ratios[0]

    def test_invalid(self):
        w = pod_weights([0.5, 0.4], 1.0)
        with pytest.raises(ValueError):
            verify_truncation_condition(w, [0.1, 0.1], 2, 2, 0.5, 0.6)
        with pytest.raises(ValueError):
            verify_truncation_condition(w, [0.1, 0.1, 0.1], 2, 3, 0.5, 0.6)


class TestQuadrature:
    @pytest.mark.parametrize("deg", [0, 3, 7, 15])
    def test_polynomial_exactness(self, deg):
        x, w = gauss_legendre_half(8)
        exact = ((0.5) ** (deg + 1) - (-0.5) ** (deg + 1)) / (deg + 1)
        assert np.dot(w, x ** deg) == pytest.approx(exact, abs=1e-15)

    def test_affine_tensor(self):
        val = tensor_quadrature(lambda Y: Y[:, 0] + 0.5, 3, 4)
        assert val == pytest.approx(0.5, rel=1e-14)

    def test_product(self):
        val = tensor_quadrature(lambda Y: np.prod(Y + 0.5, axis=1), 4, 3)
        assert val == pytest.approx(0.5 ** 4, rel=1e-14)

    def test_sine_self_convergence(self):
        field = make_field(SineBasis(0.2, 2.0))
        ref = tensor_quadrature_reference(field, make_mesh(field.domain, 3), 4, nodes_per_dim=32)
        assert ref.extra["check_nodes"] == 16
        assert ref.residual <= 1e-8 * abs(ref.value)

    def test_budget(self):
        with pytest.raises(ValueError):
            tensor_quadrature(lambda Y: Y[:, 0], 8, 32)

    def test_deterministic_field(self):
        field = make_field(SineBasis(0.0, 2.0))
        mesh = make_mesh(field.domain, 3)
        ref = tensor_quadrature_reference(field, mesh, 2, nodes_per_dim=4)
        from mlqmcfe.fem import LevelSystem
        det = LevelSystem(mesh, field).functional_batch(np.zeros((1, 2)))[0]
        assert ref.value == pytest.approx(det, rel=1e-13)
        assert ref.residual < 1e-15


class TestBruteForce:
    def test_matches_accumulator(self):
        w = pod_weights([0.9, 0.5, 0.2], 0.7)
        wm = pod_weight_map(w, 3)
        for z, N in [([1], 7), ([1, 3], 11), ([1, 5, 8], 13)]:
            assert brute_force_wce(z, N, wm) == pytest.approx(
                shift_avg_wce(LatticeRule(z, N), w), rel=1e-14)

    def test_limit(self):
        with pytest.raises(ValueError):
            brute_force_wce([1, 2, 3, 4], 5, {})
