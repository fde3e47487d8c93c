"""Independent reference computations used to check the main modules."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .fem import LevelSystem

GRID_BUDGET = 10 ** 7


@dataclass(frozen=True)
class ReferenceResult:
    value: float
    method: str
    nodes_per_dim: int
    s: int
    level: Optional[int] = None
    residual: float = float("nan")
    extra: dict = dc_field(default_factory=dict)


def gauss_legendre_half(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [-1/2, 1/2]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * x, 0.5 * w


def tensor_quadrature(func: Callable[[np.ndarray], np.ndarray], s: int, nodes_per_dim: int,
                      batch: int = 65536) -> float:
    """Tensor Gauss-Legendre integral over [-1/2, 1/2]^s of a batched integrand."""
    if s < 1:
        raise ValueError("s must be >= 1")
    total_nodes = nodes_per_dim ** s
    if total_nodes > GRID_BUDGET:
        raise ValueError(f"{nodes_per_dim}^{s} nodes exceed the budget {GRID_BUDGET}")
    x, w = gauss_legendre_half(nodes_per_dim)
    acc = []
    for start in range(0, total_nodes, batch):
        flat = np.arange(start, min(start + batch, total_nodes))
        digits = np.empty((len(flat), s), dtype=np.int64)
        rem = flat
        for j in range(s - 1, -1, -1):
            digits[:, j] = rem % nodes_per_dim
            rem = rem // nodes_per_dim
        Y = x[digits]
        W = np.prod(w[digits], axis=1)
        acc.append(float(np.dot(W, func(Y))))
    return math.fsum(acc)


def tensor_quadrature_reference(field, mesh, s: int, nodes_per_dim: int = 32, f=1.0, g=1.0,
                                check_nodes: Optional[int] = None) -> ReferenceResult:
    """I_s(G(u_h^s)) by one FE solve per tensor node; the residual compares against
    a coarser grid of ``check_nodes`` per dimension (default half)."""
    system = LevelSystem(mesh, field, f, g)

    def integrand(Y):
        return system.functional_batch(Y, "generic")

    value = tensor_quadrature(integrand, s, nodes_per_dim)
    check_nodes = max(1, nodes_per_dim // 2) if check_nodes is None else check_nodes
    coarse = tensor_quadrature(integrand, s, check_nodes)
    return ReferenceResult(value=value, method="tensor-gauss-legendre", nodes_per_dim=nodes_per_dim,
                           s=s, level=getattr(mesh, "level", None), residual=abs(value - coarse),
                           extra=dict(check_nodes=check_nodes, check_value=coarse))


def stechkin_tail(b: Sequence[float], p: float, s: int, tail: float = 0.0) -> float:
    """min(1/(1/p - 1), 1) (sum_j b_j^p)^(1/p) s^-(1/p - 1).

    ``tail`` is a declared analytic bound on sum_{j > len(b)} b_j^p.
    """
    if not (0 < p < 1):
        raise ValueError("p must lie in (0, 1)")
    if s < 1:
        raise ValueError("s must be >= 1")
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("b must be nonnegative")
    if np.any(np.diff(b) > 0):
        raise ValueError("b must be nonincreasing")
    r = 1.0 / p - 1.0
    mass = float(np.sum(b ** p)) + tail
    return min(1.0 / r, 1.0) * mass ** (1.0 / p) * s ** (-r)


def _elementary_symmetric(x: np.ndarray, kmax: int) -> np.ndarray:
    """Coefficients e_0..e_kmax of prod_j (1 + x_j t)."""
    e = np.zeros(kmax + 1)
    e[0] = 1.0
    for xj in x:
        e[1:] = e[1:] + xj * e[:-1]
    return e


@dataclass(frozen=True)
class TruncationCheck:
    left: float
    right: float
    s_prev: int
    s_curr: int
    alpha: float
    n: int

    @property
    def ratio(self) -> float:
        return self.left / self.right if self.right > 0 else float("inf")


def verify_truncation_condition(w, b: Sequence[float], s_prev: int, s_curr: int, p: float,
                                q: float, n: int = 3) -> TruncationCheck:
    """Both sides of the truncation weight condition for POD weights w.

    left  = sum over u in {1:s_curr} meeting {s_prev+1:s_curr} of (|u|!)^2 prod b_j^2 / gamma_u
    right = s_prev^(-2 alpha) sum over u in {1:s_curr} of ((|u|+n)!)^2 prod b_j^2 / gamma_u
    with alpha = 1/p - 1/q; subsets are summed per order, never enumerated.
    """
    if not (0 < s_prev < s_curr):
        raise ValueError("need 0 < s_prev < s_curr")
    if s_curr > w.s_max or s_curr > len(b):
        raise ValueError("weights or b too short for s_curr")
    b = np.asarray(b, dtype=float)[:s_curr]
    x = b ** 2 / np.asarray(w.gamma[:s_curr], dtype=float)
    kmax = s_curr
    e_prev = _elementary_symmetric(x[:s_prev], kmax)
    e_new = _elementary_symmetric(x[s_prev:], kmax)
    e_new_minus_one = e_new.copy()
    e_new_minus_one[0] = 0.0
    # prod(1 + x t) over {1:s_curr} minus over {1:s_prev}, without cancellation
    e_meet = np.convolve(e_prev, e_new_minus_one)[: kmax + 1]
    e_all = np.convolve(e_prev, e_new)[: kmax + 1]
    k = np.arange(kmax + 1)
    logG = np.asarray(w.log_Gamma[: kmax + 1], dtype=float)
    lf = np.array([math.lgamma(v + 1) for v in k])
    lfn = np.array([math.lgamma(v + n + 1) for v in k])

    def weighted(e, logfac):
        pos = e > 0
        return math.fsum(np.exp(2 * logfac[pos] - logG[pos] + np.log(e[pos])))

    alpha = 1.0 / p - 1.0 / q
    left = weighted(e_meet, lf)
    right = s_prev ** (-2 * alpha) * weighted(e_all, lfn)
    return TruncationCheck(left=left, right=right, s_prev=s_prev, s_curr=s_curr, alpha=alpha, n=n)


def pod_weight_map(w, s: int) -> dict:
    """Explicit subset -> weight map of POD weights over {0..s-1}."""
    out = {}
    for k in range(1, s + 1):
        for u in itertools.combinations(range(s), k):
            g = math.exp(w.log_Gamma[k]) * math.prod(float(w.gamma[j]) for j in u)
            out[frozenset(u)] = g
    return out


def brute_force_wce(z: Sequence[int], N: int, weights: Mapping[frozenset, float]) -> float:
    """Squared shift-averaged worst-case error by subset enumeration (s <= 3)."""
    z = [int(v) for v in z]
    s = len(z)
    if s > 3:
        raise ValueError("brute force limited to s <= 3")
    total = 0.0
    for k in range(1, s + 1):
        for u in itertools.combinations(range(s), k):
            gam = weights.get(frozenset(u), 0.0)
            if gam == 0.0:
                continue
            acc = 0.0
            for i in range(1, N + 1):
                prod = 1.0
                for j in u:
                    t = (i * z[j] % N) / N
                    prod *= t * t - t + 1.0 / 6.0
                acc += prod
            total += gam * acc / N
    return total
