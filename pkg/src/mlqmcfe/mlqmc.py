"""Scenario planner and multi-level QMC finite element estimator.

The estimator is the telescoping sum

    Q = sum_l (1/m) sum_r Q_l(Delta_l^r; G(u_l^{s_l} - u_{l-1}^{s_{l-1}})),   u_{-1} = 0,

where each level uses its own lattice rule (s_l, N_l) and independent shifts.
The coarse solve of level l sees only the first s_{l-1} coordinates of the
same parameter point as the fine solve.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, asdict
from typing import Optional, Sequence

import numpy as np

from .fem import LevelSystem, build_hierarchy, default_h0
from .field import CoefficientField, derive_sequences
from .qmc import (LatticeRule, PodWeights, cbc_construct, generate_points,
                  lambda_q, next_prime, pod_weights)

S_CAP = 4096
N_CAP = 2 ** 20
L_CAP = 12
CHUNK = 4096


def _isclose(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


def work_per_solve(h: float, d: int, s: int, scenario: int) -> float:
    """K_l: h^-d log(h^-d) with the fast path, h^-d s otherwise."""
    M = h ** -d
    if scenario == 1:
        # log floored at log 2 so the coarsest level never costs zero
        return M * max(math.log(M), math.log(2.0))
    return M * s


def n0_formula(scenario: int, L: int, tau: float, d: int, lam: float,
               eta: Optional[float] = None, xi: Optional[float] = None) -> float:
    """Leading-constant-free N_0 for the three scenarios."""
    Lt = L * tau
    Lf = max(L, 1)
    r = lam / (lam + 1.0)
    dt = d / tau
    if scenario == 1:
        if _isclose(d, 2 * tau * lam):
            return 2.0 ** (2 * Lt * lam) * Lf ** (lam * (lam + 2) / (lam + 1))
        if d < 2 * tau * lam:
            return 2.0 ** (2 * Lt * lam)
        return 2.0 ** (Lt * (dt + 2) * r) * Lf ** r
    if scenario == 2:
        lo = 2 * lam - eta
        if _isclose(dt, lo):
            return 2.0 ** (2 * Lt * lam) * Lf ** lam
        if dt < lo:
            return 2.0 ** (2 * Lt * lam)
        if _isclose(dt, 2 * lam):
            return 2.0 ** (Lt * (2 * (lam + 1) + xi) * r) * Lf ** lam
        if dt < 2 * lam:
            return 2.0 ** (Lt * (2 * (lam + 1) + (xi / eta) * (dt - 2 * lam + eta)) * r)
        return 2.0 ** (Lt * (2 + dt + xi) * r)
    if scenario == 3:
        if _isclose(dt, 2 * lam):
            return 2.0 ** (Lt * (2 * (lam + 1) + xi) * r) * Lf ** lam
        if dt < 2 * lam:
            return 2.0 ** (Lt * (2 * (lam + 1) + xi) * r)
        return 2.0 ** (Lt * (2 + dt + xi) * r)
    raise ValueError(f"unknown scenario {scenario}")


@dataclass(frozen=True)
class MlPlan:
    scenario: int
    L: int
    tau: float
    d: int
    p: Optional[float]
    q: Optional[float]
    lam: float
    h: np.ndarray
    s: np.ndarray
    N: np.ndarray
    K: np.ndarray
    m: int
    N0: float
    N0_scale: float = 1.0
    eta: Optional[float] = None
    xi: Optional[float] = None
    theta_flags: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, dtype=int))
    crossover: Optional[int] = None
    k: int = 1

    @property
    def h0(self) -> float:
        return float(self.h[0])

    @property
    def level_costs(self) -> np.ndarray:
        return self.m * self.N * self.K

    def rows(self) -> list[dict]:
        return [dict(level=l, h=float(self.h[l]), s=int(self.s[l]), N=int(self.N[l]),
                     m=self.m, K=float(self.K[l]), theta=int(self.theta_flags[l]))
                for l in range(self.L + 1)]

    def summary(self) -> dict:
        return dict(scenario=self.scenario, L=self.L, tau=self.tau, d=self.d, p=self.p, q=self.q,
                    lam=self.lam, m=self.m, N0=self.N0, N0_scale=self.N0_scale, eta=self.eta,
                    xi=self.xi, crossover=self.crossover, cost=cost_model(self))


def _level_sizes(N0: float, h: np.ndarray, K: np.ndarray, tau: float, lam: float) -> np.ndarray:
    ratio = (h[0] ** (-2 * tau) * K[0] * h ** (2 * tau) / K) ** (lam / (lam + 1.0))
    raw = np.ceil(N0 * ratio)
    return np.array([next_prime(max(int(v), 3)) for v in raw], dtype=np.int64)


def plan(epsilon: Optional[float] = None, L: Optional[int] = None, scenario: int = 1,
         p: Optional[float] = None, q: Optional[float] = None, tau: float = 2.0, d: int = 1,
         delta: float = 0.1, level_counts: Optional[Sequence[int]] = None, k: int = 1,
         h0: float = 0.5, lam: Optional[float] = None, m: int = 16, N0_scale: float = 1.0,
         s_cap: int = S_CAP, N_cap: int = N_CAP, L_cap: int = L_CAP) -> MlPlan:
    """Level schedule (h_l, s_l, N_l) for a target accuracy or a given L."""
    if (epsilon is None) == (L is None):
        raise ValueError("give exactly one of epsilon and L")
    if not (0 < tau <= 2):
        raise ValueError("tau must lie in (0, 2]")
    if not (2 <= m <= 64):
        raise ValueError("m must lie in 2..64")
    if epsilon is not None:
        if not (0 < epsilon < 1):
            raise ValueError("epsilon must lie in (0, 1)")
        L = math.ceil(math.log2(1.0 / epsilon) / tau - 1e-12)
    L = int(L)
    if L < 0 or L > L_cap:
        raise ValueError(f"L = {L} outside 0..{L_cap}")
    eta = xi = crossover = None
    if scenario == 1:
        if level_counts is None:
            raise ValueError("scenario 1 needs the wavelet level counts |J_n|")
        if k != 1:
            raise ValueError("only k = 1 is supported")
        q = 1.0 if q is None else q
        if len(level_counts) < L + k:
            raise ValueError("level_counts too short for L")
        cum = np.cumsum(level_counts)
        s = np.array([int(cum[l + k - 1]) for l in range(L + 1)])
    elif scenario == 2:
        if p is None or q is None:
            raise ValueError("scenario 2 needs p and q")
        if not (0 < p < q <= 1):
            if p == q:
                raise ValueError("p = q makes eta undefined; use scenario 3")
            raise ValueError("scenario 2 needs 0 < p < q <= 1")
        eta = p * q / (q - p)
        xi = p / (2 - 2 * p)
        cap = math.ceil(2.0 ** (L * tau * xi) - 1e-9)
        s = np.array([min(math.ceil(2.0 ** (l * tau * eta) - 1e-9), cap) for l in range(L + 1)])
        crossover = int(math.floor(L * (q - p) / (q * (2 - 2 * p))))
    elif scenario == 3:
        if p is None:
            raise ValueError("scenario 3 needs p")
        if q is not None and not _isclose(p, q):
            raise ValueError("scenario 3 needs p = q")
        if not (0 < p < 1):
            raise ValueError("scenario 3 needs p < 1")
        q = p
        xi = p / (2 - 2 * p)
        s = np.full(L + 1, math.ceil(2.0 ** (L * tau * xi) - 1e-9))
    else:
        raise ValueError(f"unknown scenario {scenario}")
    if s.max() > s_cap:
        raise ValueError(f"s_L = {s.max()} exceeds cap {s_cap}")
    if lam is None:
        lam = lambda_q(q, delta)
    h = h0 * 2.0 ** -np.arange(L + 1)
    K = np.array([work_per_solve(h[l], d, int(s[l]), scenario) for l in range(L + 1)])
    N0 = n0_formula(scenario, L, tau, d, lam, eta, xi) * N0_scale
    if N0 > N_cap:
        raise ValueError(f"N_0 = {N0:.3g} exceeds cap {N_cap}")
    N = _level_sizes(N0, h, K, tau, lam)
    if scenario == 1:
        theta = np.zeros(L + 1, dtype=int)
    else:
        theta = np.array([0] + [int(s[l] != s[l - 1]) for l in range(1, L + 1)])
    return MlPlan(scenario=scenario, L=L, tau=tau, d=d, p=p, q=q, lam=lam, h=h, s=s, N=N, K=K,
                  m=m, N0=N0, N0_scale=N0_scale, eta=eta, xi=xi, theta_flags=theta,
                  crossover=crossover, k=k)


def manual_plan(s: Sequence[int], N: Sequence[int], h0: float = 0.5, d: int = 1, m: int = 16,
                scenario: int = 3, tau: float = 2.0, lam: float = 1.0) -> MlPlan:
    """A plan with a hand-picked schedule, e.g. for oracle comparisons."""
    s = np.asarray(s, dtype=np.int64)
    N = np.asarray(N, dtype=np.int64)
    if s.shape != N.shape or s.ndim != 1:
        raise ValueError("s and N must be equal-length sequences")
    if np.any(np.diff(s) < 0):
        raise ValueError("s_l must be nondecreasing")
    L = len(s) - 1
    h = h0 * 2.0 ** -np.arange(L + 1)
    K = np.array([work_per_solve(h[l], d, int(s[l]), scenario) for l in range(L + 1)])
    theta = np.array([0] + [int(s[l] != s[l - 1]) for l in range(1, L + 1)])
    return MlPlan(scenario=scenario, L=L, tau=tau, d=d, p=None, q=None, lam=lam, h=h, s=s, N=N,
                  K=K, m=m, N0=float(N[0]), theta_flags=theta)


def cost_model(plan: MlPlan) -> float:
    return float(np.sum(plan.m * plan.N * plan.K))


def cost_exponents(lam_q: float, lam_p: float, p: float, d: int, tau: float) -> tuple[float, float]:
    """Predicted (a_ML, a_SL) with cost ~ eps^-a under k-orthogonality."""
    a_ml = max(2 * lam_q, d / tau)
    a_sl = p / (2 - 2 * p) + 2 * lam_p + d / tau
    return a_ml, a_sl


# rules

_RULE_CACHE: dict = {}


def weights_for(field: CoefficientField, p: float, q: float, lam: float, s_max: int,
                kappa: float = 1.0, C_t: float = 1.0) -> PodWeights:
    seqs = derive_sequences(field, p, q, kappa=kappa, C_t=C_t, s_max=s_max)
    return pod_weights(seqs.beta, lam)


def lattice_rule(s: int, N: int, w: PodWeights) -> LatticeRule:
    key = (int(s), int(N), w.lam, w.gamma[:s].tobytes(), w.log_Gamma[: s + 1].tobytes())
    rule = _RULE_CACHE.get(key)
    if rule is None:
        rule = cbc_construct(int(s), int(N), w)
        _RULE_CACHE[key] = rule
    return rule


def build_rules(plan: MlPlan, w: PodWeights) -> list[LatticeRule]:
    return [lattice_rule(int(plan.s[l]), int(plan.N[l]), w) for l in range(plan.L + 1)]


# estimation

@dataclass
class LevelStats:
    level: int
    mean: float
    variance: float
    N: int
    s: int
    solves: int
    cost: float
    shift_means: np.ndarray


@dataclass
class MlEstimate:
    value: float
    std_error: float
    levels: list[LevelStats]
    cost_units: float
    wall_time: float
    seed: int
    m: int

    def rows(self) -> list[dict]:
        return [dict(level=ls.level, mean=ls.mean, variance=ls.variance, N=ls.N, s=ls.s,
                     solves=ls.solves, cost=ls.cost) for ls in self.levels]


def n_threads(threads: Optional[int] = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("MLQMCFE_THREADS")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def _functional(system: LevelSystem, Y: np.ndarray, mode: str) -> np.ndarray:
    out = np.empty(Y.shape[0])
    for a in range(0, Y.shape[0], CHUNK):
        out[a:a + CHUNK] = system.functional_batch(Y[a:a + CHUNK], mode)
    return out


def level_samples(fine: LevelSystem, coarse: Optional[LevelSystem], Y: np.ndarray,
                  s_coarse: int, mode: str = "auto") -> np.ndarray:
    """G(u_fine(y)) - G(u_coarse(y_{1:s_coarse})) for each row y of Y."""
    vals = _functional(fine, Y, mode)
    if coarse is not None:
        vals = vals - _functional(coarse, Y[:, :s_coarse], mode)
    return vals


def _shifts(seed: int, level: int, m: int, s: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(level)]))
    return rng.random((m, s))


def _prepare(system: LevelSystem, s: int, mode: str) -> None:
    # fill lazy caches before worker threads touch the system
    system.mean_coeff, system.rhs, system.gvec
    resolved = system._resolve_mode(mode)
    if resolved == "generic":
        system.fluct_means(s)
    else:
        system._fast_operator()


def ml_estimate(plan: MlPlan, field: CoefficientField, hierarchy: Optional[list] = None,
                f=1.0, g=1.0, rules: Optional[Sequence[LatticeRule]] = None, seed: int = 0,
                weights: Optional[PodWeights] = None, mode: str = "auto",
                threads: Optional[int] = None, systems: Optional[list] = None) -> MlEstimate:
    """Multi-level randomly shifted lattice estimate of E[G(u)]."""
    t0 = time.perf_counter()
    L = plan.L
    if hierarchy is None:
        hierarchy = build_hierarchy(field.domain, L, plan.h0)
    if len(hierarchy) < L + 1:
        raise ValueError("hierarchy shallower than the plan")
    if rules is None:
        if weights is None:
            raise ValueError("need either rules or weights")
        rules = build_rules(plan, weights)
    if len(rules) != L + 1:
        raise ValueError("need one lattice rule per level")
    for l, rule in enumerate(rules):
        if rule.s != plan.s[l] or rule.N != plan.N[l]:
            raise ValueError(f"rule at level {l} has (s, N) = ({rule.s}, {rule.N}), "
                             f"plan wants ({plan.s[l]}, {plan.N[l]})")
    if systems is None:
        systems = [LevelSystem(hierarchy[l], field, f, g) for l in range(L + 1)]
    for l in range(L + 1):
        _prepare(systems[l], int(plan.s[l]), mode)
    shifts = [_shifts(seed, l, plan.m, int(plan.s[l])) for l in range(L + 1)]

    def task(l: int, r: int) -> float:
        Y = generate_points(rules[l], shifts[l][r])
        coarse = systems[l - 1] if l > 0 else None
        s_c = int(plan.s[l - 1]) if l > 0 else 0
        vals = level_samples(systems[l], coarse, Y, s_c, mode)
        return math.fsum(vals) / len(vals)

    jobs = [(l, r) for l in range(L + 1) for r in range(plan.m)]
    nt = n_threads(threads)
    if nt == 1:
        results = [task(l, r) for l, r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            results = list(ex.map(lambda lr: task(*lr), jobs))
    means = np.array(results).reshape(L + 1, plan.m)
    levels = []
    for l in range(L + 1):
        sm = means[l]
        var = float(np.var(sm, ddof=1)) if plan.m > 1 else float("nan")
        levels.append(LevelStats(level=l, mean=math.fsum(sm) / plan.m, variance=var,
                                 N=int(plan.N[l]), s=int(plan.s[l]),
                                 solves=plan.m * int(plan.N[l]) * (2 if l > 0 else 1),
                                 cost=float(plan.m * plan.N[l] * plan.K[l]), shift_means=sm))
    value = math.fsum(ls.mean for ls in levels)
    se = math.sqrt(sum(ls.variance / plan.m for ls in levels))
    return MlEstimate(value=value, std_error=se, levels=levels,
                      cost_units=math.fsum(ls.cost for ls in levels),
                      wall_time=time.perf_counter() - t0, seed=seed, m=plan.m)


def sl_estimate(field: CoefficientField, level: int, s: int, rule: LatticeRule, m: int = 16,
                seed: int = 0, f=1.0, g=1.0, h0: Optional[float] = None, mode: str = "auto",
                threads: Optional[int] = None, system: Optional[LevelSystem] = None) -> MlEstimate:
    """Single-level estimate on mesh level ``level`` with s active parameters."""
    h0 = default_h0(field.domain) if h0 is None else h0
    d = field.spatial_dim
    h = h0 * 2.0 ** -level
    if rule.s != s:
        raise ValueError("rule dimension differs from s")
    pl = MlPlan(scenario=3, L=0, tau=2.0, d=d, p=None, q=None, lam=rule.lam or 1.0,
                h=np.array([h]), s=np.array([s]), N=np.array([rule.N]),
                K=np.array([h ** -d * s]), m=m, N0=float(rule.N), theta_flags=np.zeros(1, dtype=int))
    if system is None:
        mesh = build_hierarchy(field.domain, level, h0)[level]
        system = LevelSystem(mesh, field, f, g)
    return ml_estimate(pl, field, hierarchy=[system.mesh], rules=[rule], seed=seed, mode=mode,
                       threads=threads, systems=[system])


def plan_dict(plan: MlPlan) -> dict:
    out = asdict(plan)
    for key, val in out.items():
        if isinstance(val, np.ndarray):
            out[key] = val.tolist()
    return out
