"""The eleven acceptance criteria at their stated tolerances.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. Criterion 3 is known not to hold for this coefficient family and is
marked as a strict expected failure.
"""
import itertools
import math

import numpy as np
import pytest

from mlqmcfe.experiments import compare_ml_sl, fe_convergence, qmc_convergence, truncation_study
from mlqmcfe.fem import LevelSystem, make_mesh
from mlqmcfe.field import DecaySequences, Domain, SineBasis, make_field
from mlqmcfe.mlqmc import lattice_rule, manual_plan, ml_estimate, weights_for
from mlqmcfe.oracle import (brute_force_wce, pod_weight_map, tensor_quadrature_reference,
                            verify_truncation_condition)
from mlqmcfe.qmc import (cbc_construct, generate_points, lambda_q, pod_weights, rho,
                         shift_avg_wce)
from mlqmcfe.wavelet import HaarBasis1D, s_ell_orthogonal

pytestmark = pytest.mark.acceptance


def test_01_fe_rate(verdict):
    field = make_field(SineBasis(0.2, 2.0))
    y = np.full(16, 0.5)
    _, fit1 = fe_convergence(field, range(2, 8), 9, y)
    field2 = make_field(SineBasis(0.2, 2.0, dim=2), domain=Domain(2, 1.0))
    _, fit2 = fe_convergence(field2, range(2, 6), 7, y)
    ok = abs(fit1.slope + 2.0) <= 0.15 and abs(fit2.slope + 2.0) <= 0.25
    verdict(1, "FE rate", ok, f"1D slope {fit1.slope:.3f} (-2 +- 0.15), 2D slope {fit2.slope:.3f} (-2 +- 0.25)")
    assert ok


def test_02_qmc_rate(verdict):
    field = make_field(SineBasis(0.2, 3.0))
    w = weights_for(field, 0.6, 0.8, lambda_q(0.8), 8)
    rows, fit, ref = qmc_convergence(field, 6, 8, [127, 257, 509, 1021, 2039, 4093], w,
                                     n_shifts=32, ref_N=2 ** 16, ref_shifts=16, seed=0)
    # the reference error must be negligible against every measured RMS
    ref_small = ref["std_error"] <= 0.1 * min(r["rms"] for r in rows)
    ok = fit.slope <= -0.80 and ref_small
    verdict(2, "QMC rate", ok, f"slope {fit.slope:.3f} (<= -0.80), reference se {ref['std_error']:.2e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="measured truncation decay is faster than the tail-sum rate")
def test_03_truncation_rate(verdict):
    field = make_field(SineBasis(0.2, 2.0))
    w = weights_for(field, 0.6, 0.8, lambda_q(0.8), 128)
    rows, fit_p, fit_i = truncation_study(field, 4, [4, 8, 16, 32], 128, w, n_points=64,
                                          qmc_N=2048, seed=0)
    ok = abs(fit_p.slope + 1.0) <= 0.2 and abs(fit_i.slope + 2.0) <= 0.4
    verdict(3, "truncation rate", ok,
            f"pointwise slope {fit_p.slope:.3f} (-1 +- 0.2), integral slope {fit_i.slope:.3f} (-2 +- 0.4)")
    assert ok


def test_04_scenario1_exactness(verdict):
    basis = HaarBasis1D(2, 8, c=0.3, theta=1.0)
    field = make_field(basis)
    rng = np.random.default_rng(4)
    Y = rng.random((100, basis.size)) - 0.5
    worst = 0.0
    for l in range(6):
        system = LevelSystem(make_mesh(field.domain, l), field)
        s_l = s_ell_orthogonal(basis, l, 1)
        Yt = Y.copy()
        Yt[:, s_l:] = 0.0
        for r in range(Y.shape[0]):
            K_full = system.stiffness(Y[r]).toarray()
            K_trunc = system.stiffness(Yt[r]).toarray()
            worst = max(worst, np.abs(K_full - K_trunc).max() / np.abs(K_full).max())
        G_full = system.functional_batch(Y)
        G_trunc = system.functional_batch(Yt)
        worst = max(worst, float(np.max(np.abs(G_full - G_trunc) / np.abs(G_full))))
    ok = worst <= 1e-12
    verdict(4, "scenario-1 exactness", ok, f"max relative difference {worst:.2e} (<= 1e-12)")
    assert ok


def test_05_fast_path_cost(verdict):
    field = make_field(HaarBasis1D(2, 10, c=0.3, theta=2.0))
    ratios = []
    for l in range(4, 10):
        system = LevelSystem(make_mesh(field.domain, l), field)
        before = system.eval_count
        system.element_coefficients(np.zeros((1, system.s_exact)), "orthogonal_fastpath")
        M = system.mesh.n_elements
        ratios.append((system.eval_count - before) / (M * l))
    spread = max(ratios) / min(ratios)
    ok = spread <= 3.0
    verdict(5, "fast-path cost", ok, f"count/(M l) in [{min(ratios):.3f}, {max(ratios):.3f}], "
                                     f"max/min {spread:.3f} (<= 3)")
    assert ok


REF_6 = 0.08306623411468493


def test_06_ml_against_oracle(verdict):
    field = make_field(SineBasis(0.2, 2.0))
    ref = tensor_quadrature_reference(field, make_mesh(field.domain, 3), 4, nodes_per_dim=32)
    assert ref.residual < 1e-12
    assert ref.value == pytest.approx(REF_6, rel=1e-12)
    w = weights_for(field, 0.6, 0.6, 1.0, 4)
    pl = manual_plan([4, 4, 4, 4], [257, 127, 61, 31], h0=0.5, m=16)
    hits = 0
    for seed in range(100):
        est = ml_estimate(pl, field, weights=w, seed=seed)
        hits += abs(est.value - ref.value) <= 3 * est.std_error
    ok = hits >= 95
    verdict(6, "ML vs oracle", ok, f"{hits}/100 seeds within 3 std errors (>= 95)")
    assert ok


def test_07_ml_vs_sl(verdict):
    field = make_field(HaarBasis1D(2, 10, c=0.3, theta=2.0))
    counts = [field.basis.level_counts(n) for n in range(11)]
    w = weights_for(field, 0.55, 0.6, lambda_q(0.6), field.basis.size)
    cmp = compare_ml_sl(field, counts, w, [2.0 ** -6, 2.0 ** -8, 2.0 ** -10], tau=2.0, m=16,
                        bias_levels=8)
    r = cmp.ratios
    decreasing = all(b < a for a, b in zip(r, r[1:]))
    gap = cmp.a_sl - cmp.a_ml
    ok = decreasing and gap >= 0.3
    verdict(7, "ML vs SL efficiency", ok,
            f"cost ratios {', '.join(f'{v:.3g}' for v in r)}; a_ML {cmp.a_ml:.2f}, a_SL {cmp.a_sl:.2f}")
    assert ok


def test_08_cbc_oracle(verdict):
    w = pod_weights([0.9, 0.6, 0.35], 0.8)
    wm = pod_weight_map(w, 3)
    worst_step = worst_wce = 0.0
    for s, N in itertools.product(range(1, 4), (5, 7, 11, 13)):
        rule = cbc_construct(s, N, w)
        for k in range(s):
            sub = {u: g for u, g in wm.items() if max(u) <= k}
            best = min(brute_force_wce(list(rule.z[:k]) + [c], N, sub) for c in range(1, N))
            worst_step = max(worst_step, abs(rule.errors[k] - best) / best)
        sub = {u: g for u, g in wm.items() if max(u) < s}
        bf = brute_force_wce(rule.z, N, sub)
        worst_wce = max(worst_wce, abs(shift_avg_wce(rule, w) - bf) / bf)
    ok = worst_step <= 1e-13 and worst_wce <= 1e-13
    verdict(8, "CBC oracle", ok, f"per-step {worst_step:.1e}, wce {worst_wce:.1e} (<= 1e-13)")
    assert ok


def test_09_weight_formulas(verdict):
    beta = np.array([0.4, 0.1])
    w1 = pod_weights(beta, 1.0)
    big = pod_weights(np.full(4096, 0.05), 0.6)
    checks = [
        math.isclose(rho(1.0), 1 / 6, rel_tol=1e-14),
        math.isclose(w1.weight([0]), 4 * math.sqrt(6) * beta[0], rel_tol=1e-13),
        math.isclose(w1.weight([1]), 4 * math.sqrt(6) * beta[1], rel_tol=1e-13),
        bool(np.all(np.isfinite(big.log_Gamma))),
        bool(np.all(np.diff(big.log_Gamma) > 0)),
    ]
    ok = all(checks)
    verdict(9, "weight formulas", ok, f"rho(1) {rho(1.0)!r}, log Gamma_4096 {big.log_Gamma[-1]:.1f}")
    assert ok


def test_10_unbiasedness(verdict):
    rng = np.random.default_rng(10)
    details = []
    ok = True
    for s, N in [(4, 127), (8, 509)]:
        rule = cbc_construct(s, N, pod_weights(np.arange(1, s + 1) ** -2.0, 1.0))
        base = generate_points(rule, np.zeros(s)) + 0.5
        vals = np.empty(10 ** 4)
        for r in range(vals.size):
            vals[r] = np.prod(np.mod(base + rng.random(s), 1.0), axis=1).mean()
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        z = abs(vals.mean() - 0.5 ** s) / se
        ok &= z <= 4
        details.append(f"(s={s}, N={N}) {z:.2f} se")
    verdict(10, "unbiasedness", ok, ", ".join(details) + " (<= 4)")
    assert ok


def test_11_truncation_condition(verdict):
    j = np.arange(1, 65, dtype=float)
    b = j ** -3.0
    p, q = 0.4, 0.6
    seqs = DecaySequences(b=b, b_bar=b, beta=np.maximum(b, b ** (p / q)), p=p, q=q, kappa=1.0,
                          B_const=0.0, C_t=1.0)
    w = pod_weights(seqs.beta, lambda_q(q))
    ratios = [verify_truncation_condition(w, b, s, 2 * s, p, q).ratio for s in (8, 16, 32)]
    ok = ratios[-1] <= 1.5 * ratios[0]
    verdict(11, "truncation condition", ok, "ratios " + ", ".join(f"{v:.3e}" for v in ratios))
    assert ok
