"""Assembly and solution of the conforming and mixed Poisson problems.

Both solvers factorize their matrix once (sparse LU) and can then be reused
for many right-hand sides, which is what the eigenvalue computation for the
mesh constant needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh
from .quadrature import gauss_line, quadrature_rule
from .spaces import (
    DiscontinuousSpace,
    Field,
    Flux,
    LagrangeSpace,
    QuadPoints,
    RaviartThomasSpace,
    element_quadrature,
    project_pi,
)

log = logging.getLogger(__name__)

ScalarFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


@dataclass
class ProblemSpec:
    """Poisson problem ``-lap u = f`` with mixed boundary data.

    The Dirichlet/Neumann partition of the boundary is carried by the mesh
    markers.  ``g_D`` must be linear and ``g_N`` constant on each boundary
    edge (linear for the RT1 flux); ``None`` means zero data.
    """

    name: str
    f: ScalarFn
    g_D: ScalarFn | None = None
    g_N: ScalarFn | None = None
    u: ScalarFn | None = None
    grad_u: Callable | None = None
    singular_point: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    nl_r, nl_c = rows.shape[1], cols.shape[1]
    R = np.repeat(rows[:, :, None], nl_c, axis=2)
    C = np.repeat(cols[:, None, :], nl_r, axis=1)
    return sp.coo_matrix((local.ravel(), (R.ravel(), C.ravel())), shape=shape).tocsr()


def _regular_points(mesh: TriMesh, degree: int):
    rule = quadrature_rule(degree)
    nq = len(rule)
    el = np.repeat(np.arange(mesh.nt), nq)
    bary = np.tile(rule.points, (mesh.nt, 1))
    w = (mesh.areas[:, None] * rule.weights[None, :])  # (nt, nq)
    return el, bary, w, nq


def stiffness_matrix(space: LagrangeSpace) -> sp.csr_matrix:
    mesh = space.mesh
    el, bary, w, nq = _regular_points(mesh, max(1, 2 * (space.degree - 1)))
    G = space.basis_grad(el, bary).reshape(mesh.nt, nq, space.nloc, 2)
    local = np.einsum("tq,tqik,tqjk->tij", w, G, G)
    d = space.element_dofs
    return _scatter(local, d, d, (space.dof_count, space.dof_count))


def local_mass(space) -> np.ndarray:
    """Unsigned element mass matrices, shape (nt, nloc, nloc)."""
    mesh = space.mesh
    vector = space.family == "raviart_thomas"
    el, bary, w, nq = _regular_points(mesh, max(1, 2 * max(space.degree, 1) + (2 if vector else 0)))
    B = space.basis(el, bary).reshape((mesh.nt, nq, space.nloc) + ((2,) if vector else ()))
    if vector:
        return np.einsum("tq,tqik,tqjk->tij", w, B, B)
    return np.einsum("tq,tqi,tqj->tij", w, B, B)


def local_divergence(rt: RaviartThomasSpace, dg: DiscontinuousSpace) -> np.ndarray:
    """Unsigned ``(div phi_r, eta_j)_K``, shape (nt, ndg, nrt)."""
    mesh = rt.mesh
    el, bary, w, nq = _regular_points(mesh, 2)
    D = rt.basis_div(el, bary).reshape(mesh.nt, nq, rt.nloc)
    E = dg.basis(el, bary).reshape(mesh.nt, nq, dg.nloc)
    return np.einsum("tq,tqj,tqr->tjr", w, E, D)


def mass_matrix(space) -> sp.csr_matrix:
    local = local_mass(space)
    s = space.element_signs()
    local = local * s[:, :, None] * s[:, None, :]
    d = space.element_dofs
    return _scatter(local, d, d, (space.dof_count, space.dof_count))


def divergence_matrix(rt: RaviartThomasSpace, dg: DiscontinuousSpace) -> sp.csr_matrix:
    """``B[j, r] = (div phi_r, eta_j)``."""
    local = local_divergence(rt, dg) * rt.element_signs()[:, None, :]
    return _scatter(local, dg.element_dofs, rt.element_dofs, (dg.dof_count, rt.dof_count))


def load_vector(space, values: np.ndarray, quad: QuadPoints) -> np.ndarray:
    """``b_i = sum_q w_q values_q phi_i(x_q)`` for a scalar space."""
    B = space.basis(quad.elements, quad.bary)
    d = space.element_dofs[quad.elements]
    contrib = (quad.weights * values)[:, None] * B
    return np.bincount(d.ravel(), weights=contrib.ravel(), minlength=space.dof_count)


def field_load_vector(space: LagrangeSpace, fh: Field) -> np.ndarray:
    """``(f_h, phi_i)`` for a piecewise polynomial ``f_h``, integrated exactly."""
    deg = space.degree + fh.space.degree
    mesh = space.mesh
    quad = element_quadrature(mesh, max(deg, 1))
    return load_vector(space, fh(quad.elements, quad.bary), quad)


def neumann_load_vector(space: LagrangeSpace, g_N: ScalarFn | None) -> np.ndarray:
    b = np.zeros(space.dof_count)
    mesh = space.mesh
    edges = mesh.neumann_edges
    if g_N is None or len(edges) == 0:
        return b
    A = mesh.vertices[mesh.edges[edges, 0]]
    Bv = mesh.vertices[mesh.edges[edges, 1]]
    L = mesh.edge_lengths[edges]
    tq, tw = gauss_line(4)
    for s, w in zip(tq, tw):
        xy = (1 - s) * A + s * Bv
        g = np.asarray(g_N(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(edges))
        if space.degree == 1:
            vals = [(mesh.edges[edges, 0], 1 - s), (mesh.edges[edges, 1], s)]
        else:
            vals = [
                (mesh.edges[edges, 0], (1 - s) * (1 - 2 * s)),
                (mesh.edges[edges, 1], s * (2 * s - 1)),
                (mesh.nv + edges, 4 * s * (1 - s)),
            ]
        for dofs, phi in vals:
            b += np.bincount(dofs, weights=w * L * g * phi, minlength=space.dof_count)
    return b


def _factorize(A: sp.spmatrix, what: str):
    A = sp.csc_matrix(A)
    try:
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"{what}: singular system ({exc})") from None


def _check_residual(A, x, b, what: str, tol: float = 1e-10):
    r = A @ x - b
    nb = np.linalg.norm(b)
    if nb > 0 and np.linalg.norm(r) > tol * max(nb, 1e-300) * 1e3:
        raise SolverError(f"{what}: residual {np.linalg.norm(r) / nb:.2e} too large")


# ---------------------------------------------------------------------------
# conforming problem
# ---------------------------------------------------------------------------


class ConformingSolver:
    """Factorized conforming Lagrange problem on a mesh.

    Dirichlet dofs are eliminated; without Dirichlet boundary a single
    multiplier row enforces zero mean.
    """

    def __init__(self, mesh: TriMesh, degree: int = 1):
        self.mesh = mesh
        self.space = LagrangeSpace(mesh, degree)
        self.K = stiffness_matrix(self.space)
        n = self.space.dof_count
        self.pure_neumann = not mesh.has_dirichlet
        if self.pure_neumann:
            self.mvec = self._basis_integrals()
            col = sp.csr_matrix(self.mvec[:, None])
            A = sp.bmat([[self.K, col], [col.T, None]])
            self.free = np.arange(n)
            self.fixed = np.zeros(0, dtype=np.int64)
        else:
            self.fixed = self.space.dirichlet_dofs
            mask = np.ones(n, dtype=bool)
            mask[self.fixed] = False
            self.free = np.flatnonzero(mask)
            A = self.K[self.free][:, self.free]
            self.K_fd = self.K[self.free][:, self.fixed]
        self.A = sp.csc_matrix(A)
        self.lu = _factorize(self.A, "conforming solve")

    def _basis_integrals(self) -> np.ndarray:
        quad = element_quadrature(self.mesh, 2)
        return load_vector(self.space, np.ones(len(quad.weights)), quad)

    def solve(self, rhs: np.ndarray, g_dofs: np.ndarray | None = None, check: bool = False) -> np.ndarray:
        """Solve for the full coefficient vector given the assembled load ``rhs``."""
        n = self.space.dof_count
        rhs = np.asarray(rhs, dtype=float)
        multi = rhs.ndim == 2
        if self.pure_neumann:
            tot = rhs.sum(axis=0)
            scale = np.abs(rhs).sum(axis=0) + 1e-300
            if np.any(np.abs(tot) > 1e-8 * np.maximum(scale, 1.0)):
                raise SolverError("pure Neumann data is not compatible (load does not integrate to zero)")
            z = np.zeros((1,) + rhs.shape[1:])
            b = np.concatenate([rhs, z], axis=0)
            x = self.lu.solve(b)
            if check:
                _check_residual(self.A, x, b, "conforming solve")
            return x[:n]
        u = np.zeros((n,) + rhs.shape[1:])
        if g_dofs is not None:
            u[self.fixed] = g_dofs if not multi else g_dofs[:, None]
        b = rhs[self.free]
        if g_dofs is not None and len(self.fixed):
            b = b - (self.K_fd @ u[self.fixed])
        x = self.lu.solve(b)
        if check:
            _check_residual(self.A, x, b, "conforming solve")
        u[self.free] = x
        return u


def dg_space_for(mesh: TriMesh, degree: int) -> DiscontinuousSpace:
    return DiscontinuousSpace(mesh, degree)


def solve_conforming(
    problem: ProblemSpec,
    mesh: TriMesh,
    degree: int = 1,
    rhs_mode: str = "exact_f",
    solver: ConformingSolver | None = None,
    f_proj: Field | None = None,
    quad_degree: int = 10,
) -> Field:
    """Galerkin solution in the degree-``degree`` Lagrange space.

    ``rhs_mode="exact_f"`` integrates ``f`` with a degree-``quad_degree`` rule
    (graded at ``problem.singular_point``); ``rhs_mode="pi_h_f"`` uses the
    projection of ``f`` onto discontinuous polynomials of degree
    ``degree - 1``.
    """
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    solver = solver or ConformingSolver(mesh, degree)
    space = solver.space
    if rhs_mode == "exact_f":
        quad = element_quadrature(mesh, quad_degree, problem.singular_point)
        xy = quad.physical(mesh)
        fv = np.asarray(problem.f(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))
        rhs = load_vector(space, fv, quad)
    elif rhs_mode == "pi_h_f":
        if f_proj is None:
            f_proj = project_pi(problem.f, DiscontinuousSpace(mesh, degree - 1), singular_point=problem.singular_point)
        if f_proj.space.degree != degree - 1:
            raise ValueError("projection degree must be degree - 1")
        rhs = field_load_vector(space, f_proj)
    else:
        raise ValueError(f"unknown rhs_mode {rhs_mode!r}")
    rhs = rhs + neumann_load_vector(space, problem.g_N)
    g = None
    if not solver.pure_neumann and problem.g_D is not None:
        xy = space.dof_coordinates[solver.fixed]
        g = np.asarray(problem.g_D(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))
    u = solver.solve(rhs, g, check=True)
    return Field(space, u)


# ---------------------------------------------------------------------------
# mixed problem
# ---------------------------------------------------------------------------


class MixedSolver:
    """Factorized Raviart-Thomas mixed problem, solved by hybridization.

    Unknowns are the flux ``p`` in RT_k and the multiplier ``mu`` in the
    discontinuous space of degree k.  Normal continuity of the flux is
    relaxed and enforced by edge multipliers ``lam`` (piecewise P_k on the
    skeleton, in the basis dual to the flux edge dofs).  Eliminating the
    element unknowns leaves a symmetric positive definite system for
    ``lam``.  Flux dofs on Neumann edges are prescribed; without Dirichlet
    boundary one multiplier is pinned and the mean of ``mu`` is removed
    afterwards.
    """

    def __init__(self, mesh: TriMesh, rt_degree: int = 0):
        self.mesh = mesh
        self.rt = RaviartThomasSpace(mesh, rt_degree)
        self.dg = DiscontinuousSpace(mesh, rt_degree)
        rt, dg = self.rt, self.dg
        self.nf, self.nm = rt.dof_count, dg.dof_count
        self.n_edge_loc = 3 * (rt_degree + 1)
        self.n_edge_dofs = mesh.ne * (rt_degree + 1)
        A = local_mass(rt)
        B = local_divergence(rt, dg)
        nl, nd = rt.nloc, dg.nloc
        S = np.zeros((mesh.nt, nl + nd, nl + nd))
        S[:, :nl, :nl] = A
        S[:, nl:, :nl] = B
        S[:, :nl, nl:] = B.transpose(0, 2, 1)
        self.Sinv = np.linalg.inv(S)
        self.edofs = rt.element_dofs[:, : self.n_edge_loc]
        ne_loc = self.n_edge_loc
        H = _scatter(self.Sinv[:, :ne_loc, :ne_loc], self.edofs, self.edofs,
                     (self.n_edge_dofs, self.n_edge_dofs))
        self.pure_neumann = not mesh.has_dirichlet
        self.neumann_dofs = rt.edge_dof_indices(mesh.neumann_edges).ravel()
        self.dirichlet_dofs = rt.edge_dof_indices(mesh.dirichlet_edges).ravel()
        fixed = self.dirichlet_dofs if not self.pure_neumann else np.zeros(1, dtype=np.int64)
        mask = np.ones(self.n_edge_dofs, dtype=bool)
        mask[fixed] = False
        self.fixed = fixed
        self.free = np.flatnonzero(mask)
        H = H.tocsr()
        self.H = sp.csc_matrix(H[self.free][:, self.free])
        self.H_fx = H[self.free][:, fixed]
        self.lu = _factorize(self.H, "mixed solve")
        self._M = None
        self._B = None
        self._bbt = None

    @property
    def M(self) -> sp.csr_matrix:
        if self._M is None:
            self._M = mass_matrix(self.rt)
        return self._M

    @property
    def B(self) -> sp.csr_matrix:
        if self._B is None:
            self._B = divergence_matrix(self.rt, self.dg)
        return self._B

    def dirichlet_rhs(self, g_D: ScalarFn | None) -> np.ndarray:
        """``int_{Gamma_D} g_D (phi . n) ds`` for every flux dof."""
        out = np.zeros(self.nf)
        mesh = self.mesh
        edges = mesh.dirichlet_edges
        if g_D is None or len(edges) == 0:
            return out
        A = mesh.vertices[mesh.edges[edges, 0]]
        Bv = mesh.vertices[mesh.edges[edges, 1]]
        tq, tw = gauss_line(4)
        idx = self.rt.edge_dof_indices(edges)
        for s, w in zip(tq, tw):
            xy = (1 - s) * A + s * Bv
            g = np.asarray(g_D(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(edges))
            if self.rt.degree == 0:
                # normal trace of the dual basis function is 1/|e|
                out[idx] += w * g
            else:
                out[idx[:, 0]] += w * g * (4 * (1 - s) - 2 * s)
                out[idx[:, 1]] += w * g * (4 * s - 2 * (1 - s))
        return out

    def solve(self, f_h_moments: np.ndarray, g_D_rhs: np.ndarray | None = None,
              neumann_values: np.ndarray | None = None, check: bool = False, equilibrate: bool = True):
        """Solve with ``(div p, eta) = -f_h_moments`` and given boundary data.

        ``f_h_moments[j] = (pi_h f, eta_j)``; ``g_D_rhs`` is the output of
        :meth:`dirichlet_rhs`; ``neumann_values`` are the prescribed flux dofs
        on the Neumann edges.  Returns ``(p, mu)`` coefficient arrays (2-D
        inputs give 2-D outputs, one column per load).
        """
        mesh = self.mesh
        F = np.asarray(f_h_moments, dtype=float)
        multi = F.ndim == 2
        if not multi:
            F = F[:, None]
        ncol = F.shape[1]
        nl, nd, ne_loc = self.rt.nloc, self.dg.nloc, self.n_edge_loc
        FK = F.reshape(mesh.nt, nd, ncol)
        # element response to the load with lam = 0: x = Sinv [0; -F]
        Y = self.Sinv[:, :, nl:]
        x0 = -np.einsum("tij,tjc->tic", Y, FK)
        lam = np.zeros((self.n_edge_dofs, ncol))
        if g_D_rhs is not None and len(self.dirichlet_dofs):
            lam[self.dirichlet_dofs] = np.asarray(g_D_rhs)[self.dirichlet_dofs][:, None]
        # flux balance on edges: sum_K (p_K . n_K moments) = prescribed
        rhs = np.zeros((self.n_edge_dofs, ncol))
        np.add.at(rhs, self.edofs, -x0[:, :ne_loc, :])
        if neumann_values is not None and len(self.neumann_dofs):
            rhs[self.neumann_dofs] += np.asarray(neumann_values, dtype=float).ravel()[:, None]
        if self.pure_neumann:
            tot = rhs.sum(axis=0)
            if np.any(np.abs(tot) > 1e-8 * np.maximum(np.abs(rhs).sum(axis=0), 1.0)):
                raise SolverError("pure Neumann data is not compatible")
        b = rhs[self.free] - self.H_fx @ lam[self.fixed]
        lam[self.free] = self.lu.solve(b)
        lamK = lam[self.edofs]
        x = x0 + np.einsum("tij,tjc->tic", self.Sinv[:, :, :ne_loc], lamK)
        pK, muK = x[:, :nl, :], x[:, nl:, :]
        mu = muK.reshape(-1, ncol)
        if self.pure_neumann:
            shift = self.dg.basis_integrals @ mu / mesh.total_area()
            mu = mu - shift[None, :]
        p = np.zeros((self.nf, ncol))
        cnt = np.zeros(self.nf)
        signed = pK * self.rt.element_signs()[:, :, None]
        np.add.at(p, self.rt.element_dofs, signed)
        np.add.at(cnt, self.rt.element_dofs, 1.0)
        p /= cnt[:, None]
        if neumann_values is not None and len(self.neumann_dofs):
            p[self.neumann_dofs] = np.asarray(neumann_values, dtype=float).ravel()[:, None]
        if equilibrate:
            p = self._divergence_correction(p, F)
        if check:
            self._check(p, mu, F, g_D_rhs, neumann_values)
        if not multi:
            return p[:, 0], mu[:, 0]
        return p, mu

    def _divergence_correction(self, p: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Remove the rounding-level defect of ``B p + F`` with a minimal flux correction.

        The multipliers are O(1) while the edge fluxes are O(h), so the
        recovered flux balances the load only to about ``eps / h^2``.  The
        correction ``dp = B_f^T (B_f B_f^T)^{-1} (-d)`` acts on the non-Neumann
        dofs and restores the balance to rounding relative to the load.
        """
        d = self.B @ p + F
        if not np.any(d):
            return p
        if self._bbt is None:
            free = np.ones(self.nf, dtype=bool)
            free[self.neumann_dofs] = False
            Bf = self.B[:, free]
            BBt = (Bf @ Bf.T).tocsc()
            keep = np.arange(self.nm)
            if self.pure_neumann:
                keep = keep[1:]
                BBt = BBt[keep][:, keep]
            self._bbt = (free, keep, Bf, _factorize(BBt, "divergence correction"))
        free, keep, Bf, lu = self._bbt
        if self.pure_neumann:
            # the total imbalance cannot be removed by a flux with fixed boundary
            # trace; leave it as a uniform constant instead of on one element
            m = self.dg.basis_integrals
            d = d - np.outer(m, d.sum(axis=0) / m.sum())
        y = np.zeros_like(d)
        y[keep] = lu.solve(-d[keep])
        p = p.copy()
        p[free] += Bf.T @ y
        return p

    def _check(self, p, mu, F, g_D_rhs, neumann_values):
        free = np.ones(self.nf, dtype=bool)
        free[self.neumann_dofs] = False
        r1 = self.M @ p + self.B.T @ mu
        if g_D_rhs is not None:
            r1 = r1 - np.asarray(g_D_rhs)[:, None]
        r1 = r1[free]
        r2 = self.B @ p + F
        scale = max(np.abs(F).max(), np.abs(p).max(), 1e-300)
        bad = max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
        if neumann_values is not None and len(self.neumann_dofs):
            nv = np.asarray(neumann_values, dtype=float).ravel()[:, None]
            bad = max(bad, np.abs(p[self.neumann_dofs] - nv).max())
        if bad > 1e-8 * scale:
            raise SolverError(f"mixed solve: residual {bad:.2e} too large")


def dg_moments(fh: Field) -> np.ndarray:
    """``(f_h, eta_j)`` for ``f_h`` in a discontinuous space (exact)."""
    sp_ = fh.space
    blocks = sp_.mass_diagonal_blocks()
    c = np.asarray(fh.coefficients).reshape(-1, sp_.nloc)
    return np.einsum("kij,kj->ki", blocks, c).ravel()


def solve_mixed(
    problem: ProblemSpec,
    mesh: TriMesh,
    rt_degree: int = 0,
    solver: MixedSolver | None = None,
    f_proj: Field | None = None,
) -> tuple[Flux, Field]:
    """Mixed Raviart-Thomas solution ``(p_h, mu_h)`` equilibrated against ``pi_h f``."""
    if rt_degree not in (0, 1):
        raise ValueError("rt_degree must be 0 or 1")
    solver = solver or MixedSolver(mesh, rt_degree)
    if f_proj is None:
        f_proj = project_pi(problem.f, DiscontinuousSpace(mesh, rt_degree), singular_point=problem.singular_point)
    if f_proj.space.degree != rt_degree:
        raise ValueError("projection degree must match the RT degree")
    nvals = None
    if len(solver.neumann_dofs):
        g_N = problem.g_N if problem.g_N is not None else (lambda x, y: 0.0 * x)
        nvals = solver.rt.boundary_dof_values(mesh.neumann_edges, g_N)
    p, mu = solver.solve(dg_moments(f_proj), solver.dirichlet_rhs(problem.g_D), nvals, check=True)
    return Flux(solver.rt, p), Field(solver.dg, mu)


# ---------------------------------------------------------------------------
# solution operators on piecewise constants
# ---------------------------------------------------------------------------


def apply_Rh(f_h: np.ndarray, mesh: TriMesh, solver: ConformingSolver | None = None) -> np.ndarray:
    """Gradient of the P1 solution with load ``f_h`` (piecewise constant), zero data.

    Returns an (nt, 2) array (or (nt, 2, ncols) for a 2-D input).
    """
    solver = solver or ConformingSolver(mesh, 1)
    f_h = np.asarray(f_h, dtype=float)
    # (f_h, phi_i) = sum over elements touching vertex i of f_K |K| / 3
    w = (mesh.areas / 3.0)[:, None] if f_h.ndim == 1 else (mesh.areas / 3.0)[:, None, None]
    contrib = w * (f_h[:, None] if f_h.ndim == 1 else f_h[:, None, :])
    rhs = np.zeros((mesh.nv,) + f_h.shape[1:])
    np.add.at(rhs, mesh.triangles, contrib)
    v = solver.solve(rhs)
    return p1_gradients(mesh, v)


def p1_gradients(mesh: TriMesh, v: np.ndarray) -> np.ndarray:
    G = mesh.bary_grads
    vt = v[mesh.triangles]
    if v.ndim == 1:
        return np.einsum("ti,tik->tk", vt, G)
    return np.einsum("tic,tik->tkc", vt, G)


def apply_Th(f_h: np.ndarray, mesh: TriMesh, solver: MixedSolver | None = None) -> Flux:
    """RT0 mixed flux with ``div p = -f_h`` and zero boundary data."""
    solver = solver or MixedSolver(mesh, 0)
    f_h = np.asarray(f_h, dtype=float)
    mom = f_h * (mesh.areas if f_h.ndim == 1 else mesh.areas[:, None])
    p, _ = solver.solve(mom)
    return Flux(solver.rt, p)
