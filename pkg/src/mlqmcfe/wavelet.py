"""Haar multiresolution fluctuation bases and the k-orthogonality check.

1D: on [0, a] the level-0 functions are the indicators of [m, m+1) and for
n >= 1, psi_m^n(x) = d_n psi(2^n x - 2m), m = 0..2^(n-1) a - 1, where psi is
+1 on [0,1) and -1 on [1,2). Functions are flattened level by level, so flat
index j runs over all of level 0 first, then level 1, and so on.

2D: tensor Haar on the unit square. Level 0 is the indicator of the square;
level n >= 1 has 4^(n-1) dyadic cells of side 2^-(n-1), each carrying the
three detail orientations (h x 1, 1 x h, h x h) scaled by d_n.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np


def _geometric_decay(c: float, theta: float) -> Callable[[int], float]:
    return lambda n: c * 2.0 ** (-n * theta)


def _validate_decay(decay: Callable[[int], float], max_level: int) -> np.ndarray:
    n_probe = max(max_level, 64) + 1
    d = np.array([float(decay(n)) for n in range(1, n_probe + 1)])
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("decay must be positive and finite")
    ratios = d[1:] / d[:-1]
    # a geometric envelope with ratio < 1 on the tail keeps sum_n d_n finite
    if np.max(ratios[len(ratios) // 2:]) >= 1.0:
        raise ValueError("decay sequence is not summable")
    return d[:max_level]


class HaarBasis1D:
    """Level-grouped Haar system on [0, a] with level scalings d_n (n >= 1)."""

    dim = 1
    lipschitz = False
    k_order = 1

    def __init__(self, a: int = 2, max_level: int = 8, decay: Optional[Callable[[int], float]] = None,
                 c: float = 1.0, theta: float = 1.0):
        if int(a) != a or a < 2:
            raise ValueError("domain length a must be an integer >= 2")
        if max_level < 0:
            raise ValueError("max_level must be >= 0")
        self.a = int(a)
        self.max_level = int(max_level)
        if decay is None:
            if c <= 0 or theta <= 0:
                raise ValueError("need c > 0 and theta > 0")
            decay = _geometric_decay(c, theta)
            self.c, self.theta = float(c), float(theta)
        else:
            self.c = self.theta = None
        self._d = np.concatenate([[1.0], _validate_decay(decay, self.max_level)])
        counts = [self.a] + [self.a * 2 ** (n - 1) for n in range(1, self.max_level + 1)]
        self._counts = np.array(counts, dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(self._counts)])
        self.size = int(self._offsets[-1])
        self._levels = np.repeat(np.arange(self.max_level + 1), self._counts)
        self._locs = np.arange(self.size) - self._offsets[self._levels]

    def __repr__(self):
        return f"HaarBasis1D(a={self.a}, max_level={self.max_level})"

    # level bookkeeping

    def scale(self, n: int) -> float:
        return float(self._d[n])

    def level_counts(self, n: int) -> int:
        if not 0 <= n <= self.max_level:
            raise ValueError(f"level {n} outside 0..{self.max_level}")
        return int(self._counts[n])

    def flat_index(self, n: int, m: int) -> int:
        if not 0 <= m < self.level_counts(n):
            raise ValueError(f"location {m} invalid at level {n}")
        return int(self._offsets[n] + m)

    def level_location(self, j: int) -> tuple[int, int]:
        if not 0 <= j < self.size:
            raise ValueError(f"flat index {j} out of range")
        return int(self._levels[j]), int(self._locs[j])

    def levels(self, s: Optional[int] = None) -> np.ndarray:
        return self._levels[: self.size if s is None else s]

    # geometry of each function: support [lo, hi) with sign change at mid

    def _geometry(self, s: int):
        n = self._levels[:s]
        m = self._locs[:s].astype(float)
        width = np.where(n == 0, 1.0, 2.0 ** (1 - n.astype(float)))
        lo = m * width
        hi = lo + width
        mid = np.where(n == 0, hi, lo + width / 2)
        return n, lo, mid, hi

    def breakpoints(self, j: int) -> tuple[float, ...]:
        n, lo, mid, hi = (v[j] for v in self._geometry(j + 1))
        return (lo, hi) if n == 0 else (lo, mid, hi)

    # basis protocol

    def _check_s(self, s: int):
        if s > self.size:
            raise ValueError(f"requested {s} functions but basis has {self.size}")

    def sup_norms(self, s: int) -> np.ndarray:
        self._check_s(s)
        return self._d[self._levels[:s]]

    def grad_sup_norms(self, s: int):
        return None

    def pointwise_abs_sum(self) -> float:
        # one function per level is nonzero at any x
        return float(np.sum(self._d))

    def evaluate(self, x, s: int) -> np.ndarray:
        self._check_s(s)
        x = np.asarray(x, dtype=float).reshape(1, -1)
        n, lo, mid, hi = (v[:, None] for v in self._geometry(s))
        d = self._d[n]
        pos = (x >= lo) & (x < mid)
        neg = (x >= mid) & (x < hi)
        return d * (pos.astype(float) - neg.astype(float))

    def element_integrals(self, edges: np.ndarray, s: int) -> np.ndarray:
        """Exact integrals of psi_0..psi_{s-1} over the intervals [edges[k], edges[k+1]]."""
        self._check_s(s)
        edges = np.asarray(edges, dtype=float)
        x0, x1 = edges[None, :-1], edges[None, 1:]
        n, lo, mid, hi = (v[:, None] for v in self._geometry(s))

        def overlap(a, b):
            return np.clip(np.minimum(x1, b) - np.maximum(x0, a), 0.0, None)

        return self._d[n] * (overlap(lo, mid) - overlap(mid, hi))

    def local_operator(self, edges: np.ndarray, n_levels: int):
        """Per-element (flat index, value) pairs for levels 0..n_levels-1.

        Valid when every element lies inside one constant piece of each such
        level (k-orthogonal alignment). Returns ``(idx, val, n_evals)`` with
        arrays of shape (n_levels, n_elements).
        """
        if n_levels - 1 > self.max_level:
            raise ValueError("not enough levels in the basis")
        edges = np.asarray(edges, dtype=float)
        xm = 0.5 * (edges[:-1] + edges[1:])
        n_el = xm.size
        idx = np.empty((n_levels, n_el), dtype=np.int64)
        val = np.empty((n_levels, n_el))
        for n in range(n_levels):
            if n == 0:
                m = np.floor(xm).astype(np.int64)
                idx[0] = m
                val[0] = 1.0
                continue
            t = xm * 2.0 ** (n - 1)
            m = np.floor(t).astype(np.int64)
            idx[n] = self._offsets[n] + m
            val[n] = np.where(t - m < 0.5, self._d[n], -self._d[n])
        return idx, val, n_levels * n_el


class TensorHaar2D:
    """Tensor Haar on the unit square, three orientations per cell for n >= 1."""

    dim = 2
    lipschitz = False
    k_order = 1
    a = 1

    def __init__(self, max_level: int = 4, decay: Optional[Callable[[int], float]] = None,
                 c: float = 1.0, theta: float = 1.0):
        if max_level < 0:
            raise ValueError("max_level must be >= 0")
        self.max_level = int(max_level)
        if decay is None:
            if c <= 0 or theta <= 0:
                raise ValueError("need c > 0 and theta > 0")
            decay = _geometric_decay(c, theta)
        self._d = np.concatenate([[1.0], _validate_decay(decay, self.max_level)])
        counts = [1] + [3 * 4 ** (n - 1) for n in range(1, self.max_level + 1)]
        self._counts = np.array(counts, dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(self._counts)])
        self.size = int(self._offsets[-1])
        self._levels = np.repeat(np.arange(self.max_level + 1), self._counts)

    def level_counts(self, n: int) -> int:
        if not 0 <= n <= self.max_level:
            raise ValueError(f"level {n} outside 0..{self.max_level}")
        return int(self._counts[n])

    def levels(self, s: Optional[int] = None) -> np.ndarray:
        return self._levels[: self.size if s is None else s]

    def describe(self, j: int):
        """(level, cell_x, cell_y, orientation, cell side) for flat index j."""
        n = int(self._levels[j])
        if n == 0:
            return 0, 0, 0, -1, 1.0
        r = j - int(self._offsets[n])
        cell, orient = divmod(r, 3)
        ncell = 2 ** (n - 1)
        cy, cx = divmod(cell, ncell)
        return n, cx, cy, orient, 1.0 / ncell

    def sup_norms(self, s: int) -> np.ndarray:
        return self._d[self._levels[:s]]

    def grad_sup_norms(self, s: int):
        return None

    def pointwise_abs_sum(self) -> float:
        return float(self._d[0] + 3.0 * np.sum(self._d[1:]))

    def _quadrant_signs(self, orient: int) -> np.ndarray:
        # sign on sub-squares [(x lo, y lo), (x hi, y lo), (x lo, y hi), (x hi, y hi)]
        return {0: np.array([1, -1, 1, -1]),
                1: np.array([1, 1, -1, -1]),
                2: np.array([1, -1, -1, 1])}[orient].astype(float)

    def evaluate(self, x, s: int) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = np.zeros((s, x.shape[0]))
        inside = np.all((x >= 0) & (x < 1), axis=1)
        for j in range(s):
            n, cx, cy, orient, side = self.describe(j)
            if n == 0:
                out[j] = inside
                continue
            u = (x[:, 0] - cx * side) / side
            v = (x[:, 1] - cy * side) / side
            sup = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
            q = (u >= 0.5).astype(int) + 2 * (v >= 0.5).astype(int)
            out[j] = np.where(sup, self._quadrant_signs(orient)[q], 0.0) * self._d[n]
        return out

    def pieces(self, j: int):
        """Constant pieces of psi_j as (xmin, xmax, ymin, ymax, value)."""
        n, cx, cy, orient, side = self.describe(j)
        if n == 0:
            return [(0.0, 1.0, 0.0, 1.0, 1.0)]
        half = side / 2
        x0, y0 = cx * side, cy * side
        signs = self._quadrant_signs(orient) * self._d[n]
        boxes = [(x0, x0 + half, y0, y0 + half), (x0 + half, x0 + side, y0, y0 + half),
                 (x0, x0 + half, y0 + half, y0 + side), (x0 + half, x0 + side, y0 + half, y0 + side)]
        return [(*b, float(sg)) for b, sg in zip(boxes, signs)]

    def element_integrals(self, triangles: np.ndarray, s: int) -> np.ndarray:
        """Exact integrals over triangles (n_el, 3, 2) by polygon clipping."""
        out = np.zeros((s, len(triangles)))
        bbmin = triangles.min(axis=1)
        bbmax = triangles.max(axis=1)
        for j in range(s):
            for (xa, xb, ya, yb, v) in self.pieces(j):
                hit = np.nonzero((bbmax[:, 0] > xa) & (bbmin[:, 0] < xb)
                                 & (bbmax[:, 1] > ya) & (bbmin[:, 1] < yb))[0]
                for e in hit:
                    out[j, e] += v * clipped_area(triangles[e], xa, xb, ya, yb)
        return out


def clipped_area(poly: np.ndarray, xa: float, xb: float, ya: float, yb: float) -> float:
    """Area of a convex polygon intersected with the box [xa,xb] x [ya,yb]."""
    pts = [tuple(p) for p in poly]
    for axis, bound, keep_ge in ((0, xa, True), (0, xb, False), (1, ya, True), (1, yb, False)):
        if not pts:
            break
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            cin = (cur[axis] >= bound) if keep_ge else (cur[axis] <= bound)
            pin = (prev[axis] >= bound) if keep_ge else (prev[axis] <= bound)
            if cin != pin:
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cin:
                out.append(cur)
        pts = out
    if len(pts) < 3:
        return 0.0
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    return 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))


def haar_basis(a: int, decay: Callable[[int], float], max_level: int) -> HaarBasis1D:
    return HaarBasis1D(a=a, max_level=max_level, decay=decay)


def level_counts(basis, n: int) -> int:
    return basis.level_counts(n)


def s_ell_orthogonal(basis, ell: int, k: int = 1) -> int:
    """Truncation dimension sum_{n=0}^{ell+k-1} |J_n| that makes truncation exact."""
    if ell < 0 or k not in (1, 2):
        raise ValueError("need ell >= 0 and k in {1, 2}")
    top = ell + k - 1
    if top > basis.max_level:
        raise ValueError(f"basis max_level {basis.max_level} < {top}")
    return int(sum(basis.level_counts(n) for n in range(top + 1)))


@dataclass
class OrthogonalityReport:
    passed: bool
    level: int
    k: int
    max_violation: float = 0.0
    membership_ok: bool = True
    failures: list = dc_field(default_factory=list)

    def __bool__(self):
        return self.passed


def _levels_of(basis, s):
    if hasattr(basis, "levels"):
        return np.asarray(basis.levels(s))
    # bases without multiresolution structure: one function per level
    return np.arange(s)


def check_k_orthogonality(basis, mesh, k: int = 1, tolerance: float = 1e-13,
                          max_index: Optional[int] = None) -> OrthogonalityReport:
    """Exact check of int psi_m^n z_l = 0 for n >= l+k against piecewise constants on ``mesh``.

    Also checks psi_m^n is piecewise constant on the mesh for n <= l+k-1.
    ``max_index`` caps the number of functions examined for unbounded bases.
    """
    if k != 1:
        raise NotImplementedError("only k = 1 bases are provided")
    if basis.dim != mesh.dim:
        raise ValueError("basis and mesh live in different dimensions")
    if mesh.dim == 1 and abs(mesh.domain.length - getattr(basis, "a", mesh.domain.length)) > 1e-14:
        raise ValueError("basis and mesh domains differ")
    ell = mesh.level
    s = basis.size if basis.size is not None else (max_index or 16)
    if max_index is not None:
        s = min(s, max_index)
    lev = _levels_of(basis, s)
    if mesh.dim == 1:
        ints = basis_element_integrals(basis, mesh.nodes, s)
        elem_size = np.diff(mesh.nodes)
    else:
        ints = basis.element_integrals(mesh.triangle_coords(), s)
        elem_size = mesh.element_areas()
    scale = basis.sup_norms(s)[:, None] * elem_size[None, :]
    high = lev >= ell + k
    viol = np.abs(ints[high]) / scale[high] if np.any(high) else np.zeros((0, 0))
    rep = OrthogonalityReport(passed=True, level=ell, k=k)
    if viol.size:
        rep.max_violation = float(viol.max())
        bad = np.argwhere(viol > tolerance)
        if bad.size:
            rep.passed = False
            js = np.nonzero(high)[0]
            rep.failures = [(int(js[r]), int(e)) for r, e in bad[:20]]
    low = np.nonzero(~high)[0]
    rep.membership_ok = _piecewise_constant_on_mesh(basis, mesh, low)
    rep.passed = rep.passed and rep.membership_ok
    return rep


def basis_element_integrals(basis, edges, s):
    if hasattr(basis, "element_integrals"):
        return basis.element_integrals(edges, s)
    from numpy.polynomial.legendre import leggauss
    xg, wg = leggauss(20)
    edges = np.asarray(edges, dtype=float)
    x0, x1 = edges[:-1], edges[1:]
    pts = 0.5 * (x1 - x0)[:, None] * (xg[None, :] + 1) + x0[:, None]
    vals = basis.evaluate(pts.reshape(-1), s).reshape(s, len(x0), len(xg))
    return np.einsum("sek,k->se", vals, wg) * 0.5 * (x1 - x0)[None, :]


def _piecewise_constant_on_mesh(basis, mesh, js) -> bool:
    if len(js) == 0:
        return True
    if mesh.dim == 1:
        if not hasattr(basis, "breakpoints"):
            return False
        nodes = mesh.nodes
        tol = 1e-14 * mesh.domain.length
        for j in js:
            for bp in basis.breakpoints(int(j)):
                if np.min(np.abs(nodes - bp)) > tol:
                    return False
        return True
    if not hasattr(basis, "pieces"):
        return False
    tris = mesh.triangle_coords()
    bbmin, bbmax = tris.min(axis=1), tris.max(axis=1)
    for j in js:
        pieces = basis.pieces(int(j))
        covered = np.zeros(len(tris), dtype=bool)
        for (xa, xb, ya, yb, _) in pieces:
            inside = ((bbmin[:, 0] >= xa - 1e-15) & (bbmax[:, 0] <= xb + 1e-15)
                      & (bbmin[:, 1] >= ya - 1e-15) & (bbmax[:, 1] <= yb + 1e-15))
            covered |= inside
        # every triangle must be in one piece or disjoint from the support
        xa = min(p[0] for p in pieces); xb = max(p[1] for p in pieces)
        ya = min(p[2] for p in pieces); yb = max(p[3] for p in pieces)
        outside = ((bbmax[:, 0] <= xa + 1e-15) | (bbmin[:, 0] >= xb - 1e-15)
                   | (bbmax[:, 1] <= ya + 1e-15) | (bbmin[:, 1] >= yb - 1e-15))
        if not np.all(covered | outside):
            return False
    return True
