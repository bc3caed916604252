"""Computable constants: C0, the mesh constant kappa_h and C(h).

``kappa_h`` is the norm of ``R_h - T_h`` on piecewise constants, where
``R_h f_h`` is the gradient of the P1 solution and ``T_h f_h`` the RT0 mixed
flux for the load ``f_h``.  Its square is the largest eigenvalue of
``G c = lam D c`` with ``D`` the (diagonal) P0 mass matrix.

Two independent routes are provided.  The dense route assembles ``G``
column by column from the difference fields.  The iterative routes never
form ``G``; they use the identity

    ||(R_h - T_h) f_h||^2 = (f_h, mu_h) - (f_h, v_h),

where ``v_h`` is the P1 solution and ``mu_h`` the mixed multiplier, so that
``D^{-1} G c = mu(c) - pi_0 v(c)`` costs one solve of each kind.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .mesh import J11, TriMesh
from .quadrature import quadrature_rule
from .solve import ConformingSolver, MixedSolver, apply_Rh, apply_Th

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096  # largest number of elements handled by the dense route


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstantsReport:
    C0: float
    kappa_h: float
    C_h: float
    h_used: float
    method: str
    lagrange_alternative: float | None = None
    iterations: int = 0

    @property
    def C0h(self) -> float:
        return self.C0 * self.h_used


def default_h(mesh: TriMesh) -> float:
    """Table convention: leg length on uniform meshes, longest edge otherwise."""
    h = mesh.meta.get("h_leg")
    return float(h) if h is not None else float(mesh.h_K.max())


def compute_C0(mesh: TriMesh, h: float | None = None) -> float:
    """``max_K (h_K / j_{1,1}) / h``."""
    h = default_h(mesh) if h is None else float(h)
    if h <= 0:
        raise ValueError("h must be positive")
    return float(mesh.h_K.max() / J11 / h)


def compute_Ch(kappa: float, C0: float, h: float, mode: str = "hypercircle", domain: str | None = None) -> float:
    """``sqrt(kappa^2 + (C0 h)^2)``, or ``0.493 h`` for H2-regular problems."""
    if kappa < 0 or C0 < 0 or h < 0:
        raise ValueError("inputs must be non-negative")
    if mode == "hypercircle":
        return math.hypot(kappa, C0 * h)
    if mode == "lagrange_0493":
        if domain == "lshape":
            raise ValueError("the 0.493 h constant needs H2 regularity, which fails on the L-shaped domain")
        return 0.493 * h
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# operator pieces
# ---------------------------------------------------------------------------


class KappaOperator:
    """``c -> D^{-1} G c`` on piecewise constants, restricted to mean zero without Dirichlet boundary."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.areas = mesh.areas
        self.total = mesh.total_area()
        self.constrained = not mesh.has_dirichlet
        self.p1 = ConformingSolver(mesh, 1)
        self.rt = MixedSolver(mesh, 0)

    def project(self, c: np.ndarray) -> np.ndarray:
        """D-orthogonal projection onto the admissible loads."""
        if not self.constrained:
            return c
        mean = (self.areas @ c) / self.total
        return c - (mean if c.ndim == 1 else mean[None, :])

    def apply(self, c: np.ndarray) -> np.ndarray:
        c = self.project(np.asarray(c, dtype=float))
        multi = c.ndim == 2
        A = self.areas if not multi else self.areas[:, None]
        rhs = np.zeros((self.mesh.nv,) + c.shape[1:])
        np.add.at(rhs, self.mesh.triangles, (A / 3.0)[:, None] * (c[:, None] if not multi else c[:, None, :]))
        v = self.p1.solve(rhs)
        v_mean = v[self.mesh.triangles].mean(axis=1)
        _, mu = self.rt.solve(A * c, equilibrate=False)
        return self.project(mu - v_mean)

    def rayleigh(self, c: np.ndarray) -> float:
        c = self.project(c)
        return float((self.areas * c) @ self.apply(c) / ((self.areas * c) @ c))


def difference_fields(mesh: TriMesh, loads: np.ndarray, p1=None, rt=None):
    """Values of ``(R_h - T_h) f`` at degree-2 quadrature points, one column per load.

    Returns ``(values, weights)`` with values of shape (nq_total, 2, ncols).
    """
    rule = quadrature_rule(2)
    nq = len(rule)
    grads = apply_Rh(loads, mesh, p1)  # (nt, 2, ncols)
    flux = apply_Th(loads, mesh, rt)
    el = np.repeat(np.arange(mesh.nt), nq)
    bary = np.tile(rule.points, (mesh.nt, 1))
    B = flux.space.basis(el, bary)  # (m, 3, 2)
    coeffs = flux.coefficients[flux.space.element_dofs[el]] * flux.space.element_signs()[el][:, :, None]
    P = np.einsum("mik,mic->mkc", B, coeffs)
    vals = np.repeat(grads, nq, axis=0) - P
    w = (mesh.areas[:, None] * rule.weights[None, :]).ravel()
    return vals, w


def _admissible_basis(mesh: TriMesh) -> np.ndarray:
    """Columns spanning the admissible P0 loads (all, or mean-zero)."""
    nt = mesh.nt
    Q = np.eye(nt)
    if mesh.has_dirichlet:
        return Q
    a = mesh.areas
    Q = Q - np.outer(np.ones(nt), a) / a.sum()
    return Q[:, :-1]


def kappa_dense(mesh: TriMesh) -> float:
    """Largest generalized eigenvalue of the explicitly assembled ``G`` (square-rooted)."""
    if mesh.nt > DENSE_LIMIT:
        raise ValueError(f"dense route limited to {DENSE_LIMIT} elements (mesh has {mesh.nt})")
    Q = _admissible_basis(mesh)
    vals, w = difference_fields(mesh, Q)
    V = vals.reshape(-1, Q.shape[1]) * np.repeat(np.sqrt(w), 2)[:, None]
    G = V.T @ V
    Dm = Q.T @ (mesh.areas[:, None] * Q)
    lam = sla.eigh(G, Dm, eigvals_only=True, subset_by_index=[Q.shape[1] - 1, Q.shape[1] - 1])
    return math.sqrt(max(float(lam[-1]), 0.0))


def _start_vector(mesh: TriMesh, rng: np.random.Generator | None):
    # fixed seed keeps runs reproducible; a random start has a nonzero
    # component along the top eigenvector with probability one
    rng = rng or np.random.default_rng(12345)
    return rng.standard_normal(mesh.nt)


def kappa_power(mesh: TriMesh, tol: float = 1e-10, maxiter: int = 20000,
                op: KappaOperator | None = None, rng=None) -> tuple[float, int]:
    """Power iteration on ``D^{-1} G`` with Rayleigh-quotient stopping."""
    op = op or KappaOperator(mesh)
    a = mesh.areas
    c = op.project(_start_vector(mesh, rng))
    c /= math.sqrt(a @ (c * c))
    lam_old = None
    for it in range(1, maxiter + 1):
        y = op.apply(c)
        lam = float(a @ (c * y))
        ny = math.sqrt(a @ (y * y))
        if ny == 0.0:
            return 0.0, it
        c = y / ny
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            return math.sqrt(max(lam, 0.0)), it
        lam_old = lam
    raise EigenSolverError(
        f"power iteration did not converge in {maxiter} iterations "
        f"(last Rayleigh quotient {lam:.10e}, last change {abs(lam - lam_old) / abs(lam):.2e})"
    )


def kappa_lanczos(mesh: TriMesh, tol: float = 1e-10, op: KappaOperator | None = None) -> tuple[float, int]:
    """Implicitly restarted Lanczos (ARPACK) on the symmetrized operator.

    With ``D = diag(a)`` the matrix ``D^{1/2} (D^{-1} G) D^{-1/2}`` is symmetric.
    """
    op = op or KappaOperator(mesh)
    s = np.sqrt(mesh.areas)
    count = [0]

    def mv(x):
        count[0] += 1
        x = np.asarray(x).ravel()
        return s * op.apply(x / s)

    L = spla.LinearOperator((mesh.nt, mesh.nt), matvec=mv, dtype=float)
    v0 = s * op.project(_start_vector(mesh, None))
    try:
        lam = spla.eigsh(L, k=1, which="LA", tol=tol, v0=v0, maxiter=5000, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"Lanczos did not converge after {count[0]} operator applications") from exc
    return math.sqrt(max(float(lam[0]), 0.0)), count[0]


def compute_kappa(mesh: TriMesh, method: str = "auto", tol: float = 1e-10) -> tuple[float, str, int]:
    """``kappa_h`` and the method used.

    ``method``: ``dense_eig``, ``power_iteration``, ``lanczos`` or ``auto``
    (dense up to 2048 elements, Lanczos above).
    """
    if method == "auto":
        method = "dense_eig" if mesh.nt <= 2048 else "lanczos"
    if method == "dense_eig":
        return kappa_dense(mesh), method, mesh.nt
    if method == "power_iteration":
        k, it = kappa_power(mesh, tol=tol)
        return k, method, it
    if method == "lanczos":
        k, it = kappa_lanczos(mesh, tol=tol)
        return k, method, it
    raise ValueError(f"unknown kappa method {method!r}")


def compute_constants(mesh: TriMesh, h: float | None = None, method: str = "auto",
                      mode: str = "hypercircle", tol: float = 1e-10) -> ConstantsReport:
    h = default_h(mesh) if h is None else float(h)
    C0 = compute_C0(mesh, h)
    kappa, used, its = compute_kappa(mesh, method, tol)
    Ch = compute_Ch(kappa, C0, h, mode, mesh.domain)
    alt = None if mesh.domain == "lshape" else 0.493 * h
    return ConstantsReport(C0, kappa, Ch, h, used, alt, its)
