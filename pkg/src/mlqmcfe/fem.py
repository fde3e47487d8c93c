"""Nested P1 finite elements on uniform meshes of [0, a] and the unit square.

Element-wise coefficient means drive assembly: the P1 gradients are constant
per element, so the stiffness matrix is sum_K mean_K(a) * K_K exactly. Means
of piecewise-constant (Haar) fluctuations are exact; smooth fluctuations use
Gauss rules of declared polynomial degree (default 6).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from .field import CoefficientField, Domain

Source = Union[float, Callable[[np.ndarray], np.ndarray]]

DEFAULT_QUAD_DEGREE = 6


class IndefiniteSystemError(RuntimeError):
    """Stiffness matrix lost positive definiteness (the ellipticity bound fails)."""


# meshes

@dataclass(frozen=True, eq=False)
class Mesh1D:
    nodes: np.ndarray
    level: int
    h: float
    domain: Domain
    dim: int = 1

    @property
    def n_dofs(self) -> int:
        return len(self.nodes) - 2

    @property
    def n_elements(self) -> int:
        return len(self.nodes) - 1

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    def element_sizes(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Friedrichs-Keller triangulation: each grid square split along its (0,0)-(1,1) diagonal."""

    n: int  # squares per side
    level: int
    h: float
    domain: Domain
    dim: int = 2

    @cached_property
    def vertices(self) -> np.ndarray:
        g = np.linspace(0.0, 1.0, self.n + 1)
        X, Y = np.meshgrid(g, g, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def triangles(self) -> np.ndarray:
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        i, j = i.ravel(), j.ravel()
        v00 = j * (n + 1) + i
        v10 = v00 + 1
        v01 = v00 + (n + 1)
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        return np.vstack([lower, upper])

    @cached_property
    def dof_of_vertex(self) -> np.ndarray:
        n = self.n
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
        interior = ((i > 0) & (i < n) & (j > 0) & (j < n)).ravel()
        dof = -np.ones((n + 1) ** 2, dtype=np.int64)
        dof[interior] = np.arange(interior.sum())
        return dof

    @property
    def n_dofs(self) -> int:
        return (self.n - 1) ** 2

    @property
    def n_elements(self) -> int:
        return 2 * self.n * self.n

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.vertices[self.dof_of_vertex >= 0]

    def triangle_coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def element_areas(self) -> np.ndarray:
        return np.full(self.n_elements, 0.5 * (1.0 / self.n) ** 2)

    def element_sizes(self) -> np.ndarray:
        return self.element_areas()


FeMesh = Union[Mesh1D, Mesh2D]


def default_h0(domain: Domain) -> float:
    # integer-length intervals start from unit elements; the unit interval and
    # square start at 1/2 so the coarsest space is nonempty
    if domain.dim == 1 and domain.length >= 2:
        return 1.0
    return 0.5


def make_mesh(domain: Domain, level: int, h0: Optional[float] = None) -> FeMesh:
    h0 = default_h0(domain) if h0 is None else float(h0)
    h = h0 * 2.0 ** (-level)
    if domain.dim == 1:
        n_el = domain.length / h
        if abs(n_el - round(n_el)) > 1e-9:
            raise ValueError("h0 must divide the interval length")
        return Mesh1D(np.linspace(0.0, domain.length, int(round(n_el)) + 1), level, h, domain)
    n = 1.0 / h
    if abs(n - round(n)) > 1e-9:
        raise ValueError("h0 must divide the unit square side")
    return Mesh2D(int(round(n)), level, h, domain)


def build_hierarchy(domain: Domain, L: int, h0: Optional[float] = None) -> list:
    """Meshes T_0..T_L with h_l = 2^-l h0, each a uniform refinement of the previous."""
    if L < 0:
        raise ValueError("L must be >= 0")
    return [make_mesh(domain, ell, h0) for ell in range(L + 1)]


def shifted_mesh_1d(domain: Domain, level: int, offset: float, h0: Optional[float] = None) -> Mesh1D:
    """Uniform interior nodes displaced by ``offset`` (boundary nodes kept); for checks only."""
    base = make_mesh(domain, level, h0)
    inner = base.nodes[1:-1] + offset
    inner = inner[(inner > 0) & (inner < domain.length)]
    extra = np.arange(base.nodes[-2] + base.h, domain.length, base.h) + offset
    nodes = np.unique(np.concatenate([[0.0], inner, extra[extra < domain.length], [domain.length]]))
    return Mesh1D(nodes, level, base.h, domain)


# quadrature

def gauss_interval(degree: int):
    n = max(1, math.ceil((degree + 1) / 2))
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w  # on [0, 1]


def gauss_triangle(degree: int):
    """Collapsed (Duffy) Gauss rule on the reference triangle, exact to ``degree``."""
    n = max(1, math.ceil((degree + 2) / 2))
    x, w = leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    wts = (WU * WV * (1.0 - U)).ravel()
    return np.column_stack([xi, eta]), wts  # weights sum to 1/2


def _quad_points(mesh: FeMesh, degree: int):
    """Physical quadrature points (n_el, nq[, 2]), weights (n_el, nq), reference coords."""
    if mesh.dim == 1:
        t, w = gauss_interval(degree)
        x0 = mesh.nodes[:-1]
        hk = mesh.element_sizes()
        pts = x0[:, None] + hk[:, None] * t[None, :]
        return pts, hk[:, None] * w[None, :], t
    ref, w = gauss_triangle(degree)
    tri = mesh.triangle_coords()
    p0 = tri[:, 0]
    e1 = tri[:, 1] - p0
    e2 = tri[:, 2] - p0
    pts = p0[:, None, :] + ref[None, :, 0:1] * e1[:, None, :] + ref[None, :, 1:2] * e2[:, None, :]
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, det[:, None] * w[None, :], ref


def _eval_source(func: Source, pts: np.ndarray) -> np.ndarray:
    if callable(func):
        flat = pts.reshape(-1) if pts.ndim == 2 else pts.reshape(-1, 2)
        return np.asarray(func(flat), dtype=float).reshape(pts.shape[:2])
    return np.full(pts.shape[:2], float(func))


def load_vector(mesh: FeMesh, func: Source, degree: int = DEFAULT_QUAD_DEGREE) -> np.ndarray:
    """(func, phi_i) for the interior hat functions."""
    pts, wts, ref = _quad_points(mesh, degree)
    fv = _eval_source(func, pts) * wts
    if mesh.dim == 1:
        # hats on element k: left node (1 - t), right node t
        left = fv @ (1.0 - ref)
        right = fv @ ref
        full = np.zeros(len(mesh.nodes))
        np.add.at(full, np.arange(mesh.n_elements), left)
        np.add.at(full, np.arange(1, mesh.n_elements + 1), right)
        return full[1:-1]
    lam = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])
    contrib = fv @ lam  # (n_el, 3)
    full = np.zeros(len(mesh.vertices))
    np.add.at(full, mesh.triangles.ravel(), contrib.ravel())
    return full[mesh.dof_of_vertex >= 0]


# coefficient means per element

def _element_means_of_basis(mesh: FeMesh, basis, s: int, degree: int) -> np.ndarray:
    if s == 0:
        return np.zeros((0, mesh.n_elements))
    if hasattr(basis, "element_integrals") and not basis.lipschitz:
        geom = mesh.nodes if mesh.dim == 1 else mesh.triangle_coords()
        return basis.element_integrals(geom, s) / mesh.element_sizes()[None, :]
    pts, wts, _ = _quad_points(mesh, degree)
    flat = pts.reshape(-1) if mesh.dim == 1 else pts.reshape(-1, 2)
    vals = basis.evaluate(flat, s).reshape(s, *pts.shape[:2])
    return np.einsum("sek,ek->se", vals, wts) / mesh.element_sizes()[None, :]


class LevelSystem:
    """Assembly and solves for one mesh, field, source f and functional g.

    ``mode`` is ``"generic"`` (all s fluctuations integrated per element, cost
    O(s M)) or ``"orthogonal_fastpath"`` (only the wavelets of levels <= l+k-1
    that overlap each element, cost O(M l)). ``"auto"`` uses the fast path when
    the field passes the k-orthogonality check on this mesh.
    """

    def __init__(self, mesh: FeMesh, field: CoefficientField, f: Source = 1.0, g: Source = 1.0,
                 quad_degree: int = DEFAULT_QUAD_DEGREE):
        if field.domain != mesh.domain:
            raise ValueError("field and mesh domains differ")
        self.mesh = mesh
        self.field = field
        self.f = f
        self.g = g
        self.quad_degree = quad_degree
        self._means: dict[int, np.ndarray] = {}
        self._ortho: Optional[bool] = None
        self._fast = None
        self.eval_count = 0

    # precomputation

    @cached_property
    def mean_coeff(self) -> np.ndarray:
        if self.field.mean_is_constant:
            return np.full(self.mesh.n_elements, float(self.field.mean))
        pts, wts, _ = _quad_points(self.mesh, self.quad_degree)
        flat = pts.reshape(-1) if self.mesh.dim == 1 else pts.reshape(-1, 2)
        vals = self.field.mean_values(flat).reshape(pts.shape[:2])
        return (vals * wts).sum(axis=1) / self.mesh.element_sizes()

    @cached_property
    def rhs(self) -> np.ndarray:
        return load_vector(self.mesh, self.f, self.quad_degree)

    @cached_property
    def gvec(self) -> np.ndarray:
        return load_vector(self.mesh, self.g, self.quad_degree)

    def fluct_means(self, s: int) -> np.ndarray:
        """(s, n_el) element means of psi_1..psi_s (generic path)."""
        if s not in self._means:
            self._means[s] = _element_means_of_basis(self.mesh, self.field.basis, s, self.quad_degree)
        return self._means[s]

    @property
    def orthogonal(self) -> bool:
        if self._ortho is None:
            from .wavelet import check_k_orthogonality
            basis = self.field.basis
            if not hasattr(basis, "local_operator"):
                self._ortho = False
            else:
                try:
                    self._ortho = bool(check_k_orthogonality(basis, self.mesh, k=1))
                except (ValueError, NotImplementedError):
                    self._ortho = False
        return self._ortho

    @property
    def s_exact(self) -> int:
        """Number of leading fluctuations seen by the fast path (levels <= l)."""
        from .wavelet import s_ell_orthogonal
        return s_ell_orthogonal(self.field.basis, self.mesh.level, 1)

    def _fast_operator(self):
        if self._fast is None:
            idx, val, n_evals = self.field.basis.local_operator(self.mesh.nodes, self.mesh.level + 1)
            self._fast = (idx, val, n_evals)
        return self._fast

    def _resolve_mode(self, mode: str) -> str:
        if mode == "auto":
            return "orthogonal_fastpath" if self.orthogonal else "generic"
        if mode == "orthogonal_fastpath" and not self.orthogonal:
            raise ValueError("fast path requires a field with the k-orthogonality property on this mesh")
        if mode not in ("generic", "orthogonal_fastpath"):
            raise ValueError(f"unknown assembly mode {mode!r}")
        return mode

    # coefficients

    def element_coefficients(self, Y: np.ndarray, mode: str = "generic") -> np.ndarray:
        """Element means of a(., y) for each row of Y; shape (n_el, npts)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        npts, s = Y.shape
        nmax = self.field.basis.size
        if nmax is not None and s > nmax:
            raise ValueError(f"basis has only {nmax} functions, got {s} parameters")
        mode = self._resolve_mode(mode)
        if mode == "generic":
            self.eval_count += s * self.mesh.n_elements * npts
            C = self.mean_coeff[:, None] + self.fluct_means(s).T @ Y.T
            return C
        idx, val, n_evals = self._fast_operator()
        s_fast = self.s_exact
        Ypad = np.zeros((npts, s_fast))
        Ypad[:, : min(s, s_fast)] = Y[:, :s_fast]
        # (levels, n_el, npts)
        C = self.mean_coeff[:, None] + np.einsum("le,lep->ep", val, Ypad.T[idx])
        self.eval_count += n_evals * npts
        return C

    # assembly

    def _assemble(self, c: np.ndarray) -> sp.csr_matrix:
        if self.mesh.dim == 1:
            w = c / self.mesh.element_sizes()
            diag = w[:-1] + w[1:]
            off = -w[1:-1]
            return sp.diags([off, diag, off], [-1, 0, 1], format="csr")
        return self._assemble_2d(c)

    @cached_property
    def _p1_2d(self):
        tri = self.mesh.triangle_coords()
        p0, p1, p2 = tri[:, 0], tri[:, 1], tri[:, 2]
        det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        area = 0.5 * np.abs(det)
        # gradients of barycentric coordinates
        gx = np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1], p0[:, 1] - p1[:, 1]]) / det[:, None]
        gy = np.column_stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0], p1[:, 0] - p0[:, 0]]) / det[:, None]
        local = area[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
        dof = self.mesh.dof_of_vertex[self.mesh.triangles]
        rows = np.repeat(dof[:, :, None], 3, axis=2)
        cols = np.repeat(dof[:, None, :], 3, axis=1)
        keep = (rows >= 0) & (cols >= 0)
        elem = np.broadcast_to(np.arange(len(tri))[:, None, None], rows.shape)
        return rows[keep], cols[keep], local[keep], elem[keep]

    def _assemble_2d(self, c: np.ndarray) -> sp.csr_matrix:
        rows, cols, base, elem = self._p1_2d
        n = self.mesh.n_dofs
        return sp.coo_matrix((base * c[elem], (rows, cols)), shape=(n, n)).tocsr()

    def stiffness(self, y, mode: str = "generic") -> sp.csr_matrix:
        c = self.element_coefficients(np.atleast_2d(y), mode)[:, 0]
        if np.any(c <= 0):
            raise IndefiniteSystemError("nonpositive element coefficient: ellipticity violated")
        return self._assemble(c)

    # solves

    def solve_batch(self, Y: np.ndarray, mode: str = "generic") -> np.ndarray:
        """Nodal solutions (n_dofs, npts) for each parameter row of Y."""
        C = self.element_coefficients(Y, mode)
        if self.mesh.dim == 1:
            return thomas_batch(C, self.mesh.element_sizes(), self.rhs)
        U = np.empty((self.mesh.n_dofs, C.shape[1]))
        for p in range(C.shape[1]):
            K = self._assemble(C[:, p]).tocsc()
            U[:, p] = spla.spsolve(K, self.rhs)
        return U

    def functional_batch(self, Y: np.ndarray, mode: str = "generic") -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.mesh.n_dofs == 0:
            return np.zeros(Y.shape[0])
        if self.mesh.dim == 1:
            return self.gvec @ self.solve_batch(Y, mode)
        return np.array([self.gvec @ self.solve_batch(Y[p:p + 1], mode)[:, 0] for p in range(Y.shape[0])])


def thomas_batch(C: np.ndarray, hk: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the 1D P1 systems for many coefficient columns at once.

    C: (n_el, npts) element coefficients; hk: element sizes; rhs: (n_dofs,).
    """
    W = C / hk[:, None]
    diag = W[:-1] + W[1:]
    off = -W[1:-1]
    n, npts = diag.shape
    if n == 0:
        return np.zeros((0, npts))
    cp = np.empty((max(n - 1, 0), npts))
    dp = np.empty((n, npts))
    piv = diag[0]
    if np.any(piv <= 0):
        raise IndefiniteSystemError("nonpositive pivot: stiffness not positive definite")
    dp[0] = rhs[0] / piv
    for i in range(1, n):
        cp[i - 1] = off[i - 1] / piv
        piv = diag[i] - off[i - 1] * cp[i - 1]
        if np.any(piv <= 0):
            raise IndefiniteSystemError("nonpositive pivot: stiffness not positive definite")
        dp[i] = (rhs[i] - off[i - 1] * dp[i - 1]) / piv
    U = np.empty((n, npts))
    U[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        U[i] = dp[i] - cp[i] * U[i + 1]
    return U


# single-solve operations

@dataclass(frozen=True, eq=False)
class FeSolution:
    mesh: FeMesh
    values: np.ndarray
    y: np.ndarray
    residual: float = 0.0

    def energy_norm(self, stiffness_unit: sp.spmatrix) -> float:
        """||grad u_h||_L2 given the a == 1 stiffness matrix."""
        return float(np.sqrt(self.values @ (stiffness_unit @ self.values)))

    def dump(self, path) -> None:
        """Plain-text rows "x [y] value" including boundary zeros in 1D."""
        with open(path, "w") as fh:
            if self.mesh.dim == 1:
                vals = np.concatenate([[0.0], self.values, [0.0]])
                for x, v in zip(self.mesh.nodes, vals):
                    fh.write(f"{x:.17g} {v:.17g}\n")
            else:
                full = np.zeros(len(self.mesh.vertices))
                full[self.mesh.dof_of_vertex >= 0] = self.values
                for (x, y), v in zip(self.mesh.vertices, full):
                    fh.write(f"{x:.17g} {y:.17g} {v:.17g}\n")


_SYSTEMS: dict = {}


def level_system(mesh: FeMesh, field: CoefficientField, f: Source = 1.0, g: Source = 1.0,
                 quad_degree: int = DEFAULT_QUAD_DEGREE) -> LevelSystem:
    key = (id(mesh), id(field), id(f) if callable(f) else f, id(g) if callable(g) else g, quad_degree)
    sysm = _SYSTEMS.get(key)
    if sysm is None or sysm.mesh is not mesh or sysm.field is not field:
        sysm = LevelSystem(mesh, field, f, g, quad_degree)
        if len(_SYSTEMS) > 256:
            _SYSTEMS.clear()
        _SYSTEMS[key] = sysm
    return sysm


def assemble_stiffness(mesh: FeMesh, field: CoefficientField, y, mode: str = "generic") -> sp.csr_matrix:
    return level_system(mesh, field).stiffness(np.asarray(y, dtype=float), mode)


def solve(mesh: FeMesh, field: CoefficientField, y, f: Source = 1.0, mode: str = "generic",
          tol: float = 1e-12) -> FeSolution:
    y = np.asarray(y, dtype=float)
    sysm = level_system(mesh, field, f)
    K = sysm.stiffness(y, mode)
    if mesh.dim == 1:
        u = sysm.solve_batch(np.atleast_2d(y), mode)[:, 0]
    else:
        u = spla.spsolve(K.tocsc(), sysm.rhs)
    F = sysm.rhs
    # normwise backward error; the plain ||Ku - F||/||F|| grows like h^-2 from rounding alone
    scale = spla.norm(K, np.inf) * np.linalg.norm(u, np.inf) + np.linalg.norm(F, np.inf)
    res = float(np.linalg.norm(K @ u - F, np.inf) / max(scale, 1e-300)) if F.size else 0.0
    if res > tol:
        cond = np.linalg.cond(K.toarray()) if K.shape[0] <= 2000 else float("nan")
        raise RuntimeError(f"solver residual {res:.3e} exceeds {tol:.1e} (cond ~ {cond:.3e})")
    return FeSolution(mesh, u, y, res)


def apply_functional(g: Source, u: FeSolution, degree: int = DEFAULT_QUAD_DEGREE) -> float:
    """G(u_h) = int_D g u_h dx."""
    if u.values.size == 0:
        return 0.0
    return float(load_vector(u.mesh, g, degree) @ u.values)


def prolongate(u: np.ndarray, coarse: FeMesh, fine: FeMesh) -> np.ndarray:
    """Interpolate interior nodal values from ``coarse`` to the once-refined ``fine``."""
    if coarse.dim == 1:
        full = np.concatenate([[0.0], u, [0.0]])
        return np.interp(fine.interior_nodes, coarse.nodes, full)
    if fine.n != 2 * coarse.n:
        raise ValueError("meshes are not one refinement apart")
    nc = coarse.n
    U = np.zeros((nc + 1) ** 2)
    U[coarse.dof_of_vertex >= 0] = u
    U = U.reshape(nc + 1, nc + 1)  # [row j (y), col i (x)]
    nf = fine.n
    V = np.zeros((nf + 1, nf + 1))
    V[::2, ::2] = U
    V[::2, 1::2] = 0.5 * (U[:, :-1] + U[:, 1:])
    V[1::2, ::2] = 0.5 * (U[:-1, :] + U[1:, :])
    V[1::2, 1::2] = 0.5 * (U[:-1, :-1] + U[1:, 1:])  # along the (0,0)-(1,1) diagonals
    return V.ravel()[fine.dof_of_vertex >= 0]


def unit_stiffness(mesh: FeMesh) -> sp.csr_matrix:
    """Stiffness matrix for a == 1 (used for energy norms)."""
    from .field import CoefficientField as _CF
    from .field import SineBasis
    unit = _CF(1.0, SineBasis(0.0, 2.0, mesh.dim), 1.0, 1.0, mesh.domain)
    return LevelSystem(mesh, unit)._assemble(np.ones(mesh.n_elements))
