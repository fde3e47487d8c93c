"""Convergence studies shared by the command line runner and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .fem import DEFAULT_QUAD_DEGREE, LevelSystem, build_hierarchy, default_h0, make_mesh
from .field import CoefficientField
from .mlqmc import (MlEstimate, level_samples, lattice_rule, ml_estimate, plan, sl_estimate,
                    weights_for)
from .qmc import PodWeights, generate_points, next_prime


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    x: np.ndarray
    y: np.ndarray


def convergence_table(x: Sequence[float], err: Sequence[float], base: float = 2.0) -> SlopeFit:
    """Least-squares slope of log(err) against log(x) (both in ``base``)."""
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    if x.shape != err.shape or x.size < 3:
        raise ValueError("need at least 3 (x, error) pairs")
    if np.any(x <= 0) or np.any(err <= 0):
        raise ValueError("convergence data must be positive")
    if len(np.unique(x)) != len(x):
        raise ValueError("duplicate x values")
    lx = np.log(x) / math.log(base)
    ly = np.log(err) / math.log(base)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return SlopeFit(float(coef[0]), float(coef[1]), res, x, err)


def fit_level_slope(levels: Sequence[int], err: Sequence[float]) -> SlopeFit:
    """Slope of log2(err) against the level index (err ~ 2^(slope l))."""
    levels = np.asarray(levels, dtype=float)
    return convergence_table(2.0 ** levels, err)


# FE rate

def fe_convergence(field: CoefficientField, levels: Sequence[int], ref_level: int, y,
                   f=1.0, g=1.0, quad_degree: int = DEFAULT_QUAD_DEGREE) -> tuple[list[dict], SlopeFit]:
    """|G(u_ref) - G(u_l)| at a fixed parameter point, against the level index."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    ref = LevelSystem(make_mesh(field.domain, ref_level), field, f, g, quad_degree).functional_batch(y)[0]
    rows = []
    for l in levels:
        mesh = make_mesh(field.domain, l)
        val = LevelSystem(mesh, field, f, g, quad_degree).functional_batch(y)[0]
        rows.append(dict(level=int(l), h=float(mesh.h), value=float(val), error=abs(ref - val)))
    fit = fit_level_slope([r["level"] for r in rows], [r["error"] for r in rows])
    return rows, fit


# QMC rate

def qmc_convergence(field: CoefficientField, level: int, s: int, Ns: Sequence[int],
                    weights: PodWeights, n_shifts: int = 32, ref_N: int = 65537,
                    ref_shifts: int = 16, seed: int = 0, f=1.0, g=1.0,
                    quad_degree: int = DEFAULT_QUAD_DEGREE) -> tuple[list[dict], SlopeFit, dict]:
    """RMS error over random shifts of single-level QMC against a large-N lattice reference."""
    system = LevelSystem(make_mesh(field.domain, level), field, f, g, quad_degree)
    ss = np.random.SeedSequence(seed)
    ref_rng, *rngs = [np.random.default_rng(c) for c in ss.spawn(len(Ns) + 1)]
    ref_rule = lattice_rule(s, next_prime(ref_N), weights)
    ref_vals = np.array([_qmc_mean(system, ref_rule, ref_rng.random(s)) for _ in range(ref_shifts)])
    ref = float(ref_vals.mean())
    ref_se = float(ref_vals.std(ddof=1) / math.sqrt(ref_shifts))
    rows = []
    for N, rng in zip(Ns, rngs):
        rule = lattice_rule(s, next_prime(N), weights)
        vals = np.array([_qmc_mean(system, rule, rng.random(s)) for _ in range(n_shifts)])
        rms = float(np.sqrt(np.mean((vals - ref) ** 2)))
        rows.append(dict(N=rule.N, rms=rms, mean=float(vals.mean())))
    fit = convergence_table([r["N"] for r in rows], [r["rms"] for r in rows])
    return rows, fit, dict(value=ref, std_error=ref_se, N=ref_rule.N)


def _qmc_mean(system: LevelSystem, rule, shift) -> float:
    vals = level_samples(system, None, generate_points(rule, shift), 0, "generic")
    return math.fsum(vals) / len(vals)


# truncation rate

def truncation_study(field: CoefficientField, level: int, s_values: Sequence[int], s_max: int,
                     weights: PodWeights, n_points: int = 64, qmc_N: int = 2048,
                     n_shifts: int = 8, seed: int = 0, f=1.0, g=1.0,
                     quad_degree: int = DEFAULT_QUAD_DEGREE) -> tuple[list[dict], SlopeFit, SlopeFit]:
    """Pointwise and integrated dimension-truncation errors against s.

    Pointwise: mean over random y* of |G(u^s(y*)) - G(u^{s_max}(y*))|.
    Integrated: |Q(G(u^s)) - Q(G(u^{s_max}))| with a shared randomly shifted
    lattice rule of about ``qmc_N`` points in s_max dimensions, averaged over shifts.
    """
    system = LevelSystem(make_mesh(field.domain, level), field, f, g, quad_degree)
    rng = np.random.default_rng(seed)
    Y = rng.random((n_points, s_max)) - 0.5
    full = system.functional_batch(Y)
    rule = lattice_rule(s_max, next_prime(qmc_N), weights)
    shifts = rng.random((n_shifts, s_max))
    pts = [generate_points(rule, sh) for sh in shifts]
    q_full = np.array([system.functional_batch(P).mean() for P in pts])
    rows = []
    for s in s_values:
        Ys = Y.copy()
        Ys[:, s:] = 0.0
        point = float(np.mean(np.abs(system.functional_batch(Ys) - full)))
        q_s = []
        for P in pts:
            Ps = P.copy()
            Ps[:, s:] = 0.0
            q_s.append(system.functional_batch(Ps).mean())
        integ = float(np.mean(np.abs(np.array(q_s) - q_full)))
        rows.append(dict(s=int(s), pointwise=point, integral=integ))
    fit_p = convergence_table([r["s"] for r in rows], [r["pointwise"] for r in rows])
    fit_i = convergence_table([r["s"] for r in rows], [r["integral"] for r in rows])
    return rows, fit_p, fit_i


# multi-level versus single-level cost

@dataclass
class MatchedRun:
    epsilon: float
    L: int
    bias: float
    ml_cost: float
    ml_std: float
    ml_N0_scale: float
    sl_cost: float
    sl_std: float
    sl_N: int
    sl_s: int


@dataclass
class CostComparison:
    runs: list[MatchedRun]
    reference: float
    a_ml: float
    a_sl: float
    level_means: list = dc_field(default_factory=list)

    @property
    def ratios(self) -> list[float]:
        return [r.ml_cost / r.sl_cost for r in self.runs]


def level_difference_means(field: CoefficientField, counts: Sequence[int], weights: PodWeights,
                           max_level: int, N: int = 1021, n_shifts: int = 4, seed: int = 0,
                           f=1.0, g=1.0, h0: Optional[float] = None,
                           quad_degree: int = DEFAULT_QUAD_DEGREE) -> np.ndarray:
    """E[G(u_l) - G(u_{l-1})] for l = 0..max_level with exact truncation s_l."""
    h0 = default_h0(field.domain) if h0 is None else h0
    hier = build_hierarchy(field.domain, max_level, h0)
    systems = [LevelSystem(m, field, f, g, quad_degree) for m in hier]
    cum = np.cumsum(counts)
    out = []
    ss = np.random.SeedSequence([seed, 7])
    for l, child in zip(range(max_level + 1), ss.spawn(max_level + 1)):
        s = int(cum[l])
        rule = lattice_rule(s, next_prime(N), weights)
        rng = np.random.default_rng(child)
        vals = []
        for _ in range(n_shifts):
            P = generate_points(rule, rng.random(s))
            coarse = systems[l - 1] if l else None
            vals.append(level_samples(systems[l], coarse, P, int(cum[l - 1]) if l else 0, "auto").mean())
        out.append(float(np.mean(vals)))
    return np.array(out)


def _estimated_bias(diffs: np.ndarray, L: int) -> float:
    # telescoped tail beyond L plus a Richardson remainder for an h^2 rate
    return abs(float(np.sum(diffs[L + 1:])) + diffs[-1] / 3.0)


def compare_ml_sl(field: CoefficientField, counts: Sequence[int], weights: PodWeights,
                  epsilons: Sequence[float], tau: float = 2.0, m: int = 16, seed: int = 0,
                  bias_levels: int = 9, f=1.0, g=1.0, relative: bool = True,
                  max_doublings: int = 40, threads: Optional[int] = None,
                  quad_degree: int = DEFAULT_QUAD_DEGREE) -> CostComparison:
    """Costs of ML and SL estimators tuned by measurement to each RMS target.

    For each epsilon: the finest level L is the smallest one whose estimated
    discretization bias is at most epsilon/sqrt(2); then the ML N0 multiplier
    and the SL lattice size are doubled until the measured standard error is
    at most epsilon/sqrt(2). With ``relative`` the targets scale with |E[G]|.
    """
    h0 = default_h0(field.domain)
    d = field.spatial_dim
    diffs = level_difference_means(field, counts, weights, bias_levels, seed=seed, f=f, g=g, h0=h0,
                                   quad_degree=quad_degree)
    ref = float(np.sum(diffs))
    scale = abs(ref) if relative else 1.0
    lam = weights.lam
    runs = []
    hier = build_hierarchy(field.domain, bias_levels, h0)
    systems = [LevelSystem(mesh, field, f, g, quad_degree) for mesh in hier]
    for eps in epsilons:
        target = eps * scale / math.sqrt(2.0)
        L = next(l for l in range(bias_levels) if _estimated_bias(diffs, l) <= target)
        bias = _estimated_bias(diffs, L)
        # multi-level: grow N0 from a single point at level 0
        base = plan(L=L, scenario=1, level_counts=counts, tau=tau, d=d, h0=h0, lam=lam, m=m,
                    N_cap=2 ** 60)
        ns = 1.0 / base.N0
        for _ in range(max_doublings):
            pl = plan(L=L, scenario=1, level_counts=counts, tau=tau, d=d, h0=h0, lam=lam, m=m,
                      N0_scale=ns, N_cap=2 ** 60)
            est = ml_estimate(pl, field, hier, weights=weights, seed=seed, systems=systems[:L + 1],
                              threads=threads)
            if est.std_error <= target:
                break
            ns *= 2.0
        else:
            raise RuntimeError(f"ML did not reach epsilon={eps}")
        ml = est
        # single-level on the finest mesh with exact truncation
        s_L = int(np.sum(counts[: L + 1]))
        N = 3
        for _ in range(max_doublings):
            rule = lattice_rule(s_L, N, weights)
            sl = sl_estimate(field, L, s_L, rule, m=m, seed=seed, h0=h0, system=systems[L],
                             threads=threads)
            if sl.std_error <= target:
                break
            N = next_prime(2 * N)
        else:
            raise RuntimeError(f"SL did not reach epsilon={eps}")
        runs.append(MatchedRun(epsilon=eps, L=L, bias=bias, ml_cost=ml.cost_units,
                               ml_std=ml.std_error, ml_N0_scale=ns, sl_cost=sl.cost_units,
                               sl_std=sl.std_error, sl_N=N, sl_s=s_L))
    inv = [1.0 / r.epsilon for r in runs]
    a_ml = convergence_table(inv, [r.ml_cost for r in runs]).slope
    a_sl = convergence_table(inv, [r.sl_cost for r in runs]).slope
    return CostComparison(runs=runs, reference=ref, a_ml=a_ml, a_sl=a_sl, level_means=diffs.tolist())
