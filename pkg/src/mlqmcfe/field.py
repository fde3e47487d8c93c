"""Affine-parametric diffusion coefficients a(x, y) = abar(x) + sum_j y_j psi_j(x).

A field couples a mean ``abar`` with an ordered fluctuation basis. Bases are
duck-typed; each must provide

    dim, size (None if unbounded), lipschitz (bool),
    evaluate(x, s) -> array (s, npts),
    sup_norms(s), grad_sup_norms(s) (None when not Lipschitz),
    pointwise_abs_sum()  -- upper bound of sup_x sum_j |psi_j(x)|.

Indices are 0-based throughout: column ``j`` of a parameter vector pairs with
the (j+1)-th fluctuation.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import zeta as _zeta

Mean = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Domain:
    """Interval [0, length] (dim 1) or the unit square (dim 2)."""

    dim: int = 1
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.dim}")
        if self.dim == 2 and self.length != 1.0:
            raise ValueError("2D domain is the unit square")
        if self.length <= 0:
            raise ValueError("domain length must be positive")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return (x >= 0.0) & (x <= self.length)
        x = x.reshape(-1, 2)
        return np.all((x >= 0.0) & (x <= 1.0), axis=1)

    @property
    def volume(self) -> float:
        return self.length ** self.dim


class SineBasis:
    """psi_j(x) = c j^-theta sin(j pi x1) [sin(j pi x2) in 2D], on the unit interval/square."""

    lipschitz = True
    size = None

    def __init__(self, c: float = 0.2, theta: float = 2.0, dim: int = 1):
        if theta <= 1.0:
            raise ValueError("sine family needs theta > 1 for summable sup-norms")
        if c < 0:
            raise ValueError("amplitude c must be nonnegative")
        self.c = float(c)
        self.theta = float(theta)
        self.dim = dim

    def __repr__(self):
        return f"SineBasis(c={self.c}, theta={self.theta}, dim={self.dim})"

    def sup_norms(self, s: int) -> np.ndarray:
        j = np.arange(1, s + 1, dtype=float)
        return self.c * j ** -self.theta

    def grad_sup_norms(self, s: int) -> np.ndarray:
        # 2D: |grad| = c j^(1-theta) pi sqrt(cos^2 sin^2 + sin^2 cos^2) <= c j^(1-theta) pi, attained.
        j = np.arange(1, s + 1, dtype=float)
        return self.c * np.pi * j ** (1.0 - self.theta)

    def pointwise_abs_sum(self) -> float:
        return self.c * float(_zeta(self.theta))

    def evaluate(self, x, s: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        j = np.arange(1, s + 1, dtype=float)[:, None]
        amp = self.c * j ** -self.theta
        if self.dim == 1:
            return amp * np.sin(np.pi * j * x.reshape(1, -1))
        x = x.reshape(-1, 2)
        return amp * np.sin(np.pi * j * x[:, 0]) * np.sin(np.pi * j * x[:, 1])


@dataclass(frozen=True)
class CoefficientField:
    """The affine coefficient on a domain, with ellipticity bounds a_min/a_max."""

    mean: Mean
    basis: object
    a_min: float
    a_max: float
    domain: Domain
    mean_grad_sup: float = 0.0
    mean_inf: Optional[float] = None

    def __post_init__(self):
        if self.a_min <= 0:
            raise ValueError("a_min must be positive (ellipticity)")
        if self.a_max < self.a_min:
            raise ValueError("a_max must be >= a_min")
        if self.basis.dim != self.domain.dim:
            raise ValueError("basis and domain dimensions differ")

    @property
    def spatial_dim(self) -> int:
        return self.domain.dim

    @property
    def mean_is_constant(self) -> bool:
        return not callable(self.mean)

    def mean_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        npts = x.shape[0] if x.ndim > (self.domain.dim - 1) else 1
        if callable(self.mean):
            return np.asarray(self.mean(x), dtype=float).reshape(-1)
        return np.full(npts, float(self.mean))

    def max_terms(self) -> Optional[int]:
        return self.basis.size


def evaluate_coeff(field: CoefficientField, x, y) -> np.ndarray:
    """a(x, y) with y truncated at len(y) (remaining coordinates anchored at 0)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(np.abs(y) > 0.5):
        raise ValueError("parameter components must lie in [-1/2, 1/2]")
    if field.basis.size is not None and y.size > field.basis.size:
        raise ValueError(f"basis has only {field.basis.size} functions, got {y.size} parameters")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (field.domain.dim == 2 and x.ndim == 1)
    pts = x.reshape(-1) if field.domain.dim == 1 else x.reshape(-1, 2)
    if not np.all(field.domain.contains(pts)):
        raise ValueError("x lies outside the domain")
    val = field.mean_values(pts)
    if y.size:
        val = val + y @ field.basis.evaluate(pts, y.size)
    return float(val[0]) if scalar else val


def make_field(
    basis,
    mean: Mean = 1.0,
    domain: Optional[Domain] = None,
    a_min: Optional[float] = None,
    a_max: Optional[float] = None,
    mean_inf: Optional[float] = None,
    mean_sup: Optional[float] = None,
    mean_grad_sup: float = 0.0,
) -> CoefficientField:
    """Build a field, filling a_min/a_max from the pointwise sufficient condition.

    For a callable mean, ``mean_inf`` and ``mean_sup`` must be supplied when the
    bounds are left to default.
    """
    if domain is None:
        length = float(getattr(basis, "a", 1.0)) if basis.dim == 1 else 1.0
        domain = Domain(basis.dim, length)
    if callable(mean):
        if (a_min is None and mean_inf is None) or (a_max is None and mean_sup is None):
            raise ValueError("callable mean needs mean_inf/mean_sup to derive bounds")
    else:
        mean_inf = float(mean) if mean_inf is None else mean_inf
        mean_sup = float(mean) if mean_sup is None else mean_sup
    half_sum = 0.5 * basis.pointwise_abs_sum()
    if a_min is None:
        a_min = mean_inf - half_sum
        if a_min <= 0:
            raise ValueError(
                f"ellipticity fails: inf abar - (1/2) sum |psi_j| = {a_min:.4g} <= 0"
            )
    elif mean_inf is not None and mean_inf - half_sum < a_min * (1 - 1e-12):
        raise ValueError("declared a_min is not guaranteed by the sufficient condition")
    if a_max is None:
        a_max = mean_sup + half_sum
    return CoefficientField(mean, basis, float(a_min), float(a_max), domain,
                            mean_grad_sup=mean_grad_sup, mean_inf=mean_inf)


def check_bounds(field: CoefficientField, s: int, n_samples: int = 200,
                 rng: Optional[np.random.Generator] = None) -> bool:
    """Randomized check of a_min <= a(x, y) <= a_max over x in D, y in [-1/2,1/2]^s."""
    rng = np.random.default_rng(0) if rng is None else rng
    if field.domain.dim == 1:
        x = rng.uniform(0, field.domain.length, size=n_samples)
    else:
        x = rng.uniform(0, 1, size=(n_samples, 2))
    psi = field.basis.evaluate(x, s)
    base = field.mean_values(x)
    # extreme parameter choices for each x, plus random interior draws
    lo = base - 0.5 * np.abs(psi).sum(axis=0)
    hi = base + 0.5 * np.abs(psi).sum(axis=0)
    Y = rng.uniform(-0.5, 0.5, size=(n_samples, s))
    vals = base + np.einsum("ij,ji->i", Y, psi)
    tol = 1e-12 * max(1.0, field.a_max)
    return bool(np.all(lo >= field.a_min - tol) and np.all(hi <= field.a_max + tol)
                and np.all(vals >= field.a_min - tol) and np.all(vals <= field.a_max + tol))


@dataclass(frozen=True)
class DecaySequences:
    b: np.ndarray
    b_bar: np.ndarray
    beta: np.ndarray
    p: float
    q: float
    kappa: float
    B_const: float
    C_t: float


def default_B(field: CoefficientField, s_max: int) -> float:
    """Computable upper bound of sup_y ||grad a(., y)||_inf / a_min."""
    grads = field.basis.grad_sup_norms(s_max)
    gsum = 0.0 if grads is None else float(np.sum(grads))
    return (field.mean_grad_sup + 0.5 * gsum) / field.a_min


def derive_sequences(field: CoefficientField, p: float, q: float, kappa: float = 1.0,
                     B_const: Optional[float] = None, C_t: float = 1.0,
                     s_max: int = 64, require_gradients: Optional[bool] = None) -> DecaySequences:
    """b_j = ||psi_j||/a_min, bbar_j = b_j + kappa C_t (||grad psi_j|| + B ||psi_j||),
    beta_j = max(bbar_j, b_j^(p/q)).

    Bases without Lipschitz fluctuations (Haar) get the gradient term dropped;
    asking for ``require_gradients=True`` on such a basis is an error.
    """
    if not (0 < p <= q <= 1):
        raise ValueError(f"need 0 < p <= q <= 1, got p={p}, q={q}")
    if not (0 < kappa <= 1):
        raise ValueError("kappa must lie in (0, 1]")
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    if field.basis.size is not None and s_max > field.basis.size:
        raise ValueError(f"basis has only {field.basis.size} functions")
    if require_gradients is None:
        require_gradients = field.basis.lipschitz
    sup = np.asarray(field.basis.sup_norms(s_max), dtype=float)
    grads = field.basis.grad_sup_norms(s_max)
    if grads is None:
        if require_gradients:
            raise ValueError("gradient sup-norms unavailable for a basis claiming Lipschitz fluctuations")
        grads = np.zeros(s_max)
    if B_const is None:
        B_const = default_B(field, s_max)
    b = sup / field.a_min
    b_bar = b + kappa * C_t * (np.asarray(grads, dtype=float) + B_const * sup)
    beta = np.maximum(b_bar, b ** (p / q))
    return DecaySequences(b=b, b_bar=b_bar, beta=beta, p=p, q=q, kappa=kappa,
                          B_const=float(B_const), C_t=float(C_t))


@dataclass
class SummabilityReport:
    s_max: int
    sum_b_p: float
    sum_bbar_q: float
    sum_beta_q: float
    tail_bounds: dict = dc_field(default_factory=dict)
    small_q1_ok: Optional[bool] = None
    small_q1_exceeded_at: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(np.isfinite([self.sum_b_p, self.sum_bbar_q, self.sum_beta_q])) and (
            self.small_q1_ok is not False)


def summability_report(seqs: DecaySequences, s_max: Optional[int] = None,
                       envelope: Optional[tuple[float, float]] = None) -> SummabilityReport:
    """Partial sums of b^p, bbar^q, beta^q up to s_max.

    ``envelope=(c, theta)`` declares b_j <= c j^-theta and adds the analytic
    bound of sum_{j > s_max} b_j^p (finite iff p theta > 1). For q = 1 the
    smallness condition sum bbar_j < sqrt(6) is checked on the partial sums.
    """
    n = len(seqs.b) if s_max is None else int(s_max)
    b, bb, be = seqs.b[:n], seqs.b_bar[:n], seqs.beta[:n]
    rep = SummabilityReport(
        s_max=n,
        sum_b_p=float(np.sum(b ** seqs.p)),
        sum_bbar_q=float(np.sum(bb ** seqs.q)),
        sum_beta_q=float(np.sum(be ** seqs.q)),
    )
    if envelope is not None:
        c, theta = envelope
        expo = seqs.p * theta
        # sum_{j>n} (c j^-theta)^p <= c^p * n^(1-expo) / (expo - 1)
        rep.tail_bounds["b_p"] = (c ** seqs.p * n ** (1 - expo) / (expo - 1)
                                  if expo > 1 else float("inf"))
    if seqs.q == 1.0:
        partial = np.cumsum(bb)
        over = np.nonzero(partial >= np.sqrt(6.0))[0]
        rep.small_q1_ok = over.size == 0
        rep.small_q1_exceeded_at = int(over[0]) + 1 if over.size else None
    return rep
