"""Guaranteed global and local energy-error estimators and true errors.

Notation: ``u_h`` is the P1 solution (exact load), ``p_h`` the RT flux with
``div p_h + pi_h f = 0``, ``alpha`` the cutoff for the subdomain ``S`` with
band width ``eps`` and ``C0h = max_K h_K / j_{1,1}``.

* ``E1 = ||grad u_h - p_h||_alpha + C0h ||f - pi_h f||``
* ``E2 = sqrt(2 sqrt(2) C(h) / eps) ||grad u_h - p_h||``
* local bound ``sqrt(E1^2 + E2^2) + 2 C0h ||f - pi_h f||``
* global bound ``||grad u_h - p_h|| + C0h ||f - pi_h f||``

The barred quantities use the solution ``ubar_h`` computed with the
projected load instead of ``u_h``.  The improved global term replaces
``||grad u_h - p_h||^2`` by ``||grad u_h - pt_h|| ||grad wbar_h - pt_h||`` with an
RT1 flux ``pt_h`` and a P2 solution ``wbar_h``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constants import ConstantsReport, compute_constants
from .mesh import J11, TriMesh
from .solve import ProblemSpec, solve_conforming, solve_mixed
from .spaces import (
    CORNER_LEVELS,
    DiscontinuousSpace,
    Field,
    Flux,
    VectorField,
    element_quadrature,
    exact_gradient_field,
    flux_field,
    gradient_field,
    project_pi,
)
from .weight import WeightFn, full_norm, rect_quadrature, weighted_seminorm

log = logging.getLogger(__name__)

CSV_COLUMNS = ("h", "kappa_h", "C_h", "E_L", "E1", "E2", "EhatL", "EhatG", "beta", "beta_hat")
TWO_SQRT2 = 2.0 * math.sqrt(2.0)


class EquilibrationError(ValueError):
    """The flux does not balance the projected load; no bound can be certified."""


class QuadratureError(RuntimeError):
    pass


@dataclass
class EstimatorReport:
    h: float
    kappa_h: float
    C_h: float
    C0h: float
    C0_term: float
    E1: float
    E2: float
    E_hat_L: float
    E_hat_G: float
    residual_alpha: float
    residual_global: float
    E1_bar: float = math.nan
    E2_bar: float = math.nan
    bound_aux: float = math.nan
    E_L: float = math.nan
    E_G: float = math.nan
    variant: str = "rt0"
    epsilon: float = math.nan
    certified: bool = True
    notes: list = field(default_factory=list)

    @property
    def beta(self) -> float:
        """True local-to-global error ratio in percent."""
        return 100.0 * self.E_L / self.E_G if self.E_G > 0 else math.nan

    @property
    def beta_hat(self) -> float:
        return 100.0 * self.E_hat_L / self.E_hat_G if self.E_hat_G > 0 else math.nan

    def bounds_hold(self, slack: float = 1e-9) -> bool:
        ok = True
        if not math.isnan(self.E_L):
            ok &= self.E_L <= self.E_hat_L + slack
        if not math.isnan(self.E_G):
            ok &= self.E_G <= self.E_hat_G + slack
        return bool(ok)

    def row(self) -> dict:
        return {
            "h": self.h, "kappa_h": self.kappa_h, "C_h": self.C_h, "E_L": self.E_L,
            "E1": self.E1, "E2": self.E2, "EhatL": self.E_hat_L, "EhatG": self.E_hat_G,
            "beta": self.beta, "beta_hat": self.beta_hat,
        }

    def full_row(self) -> dict:
        d = asdict(self)
        d.pop("notes")
        d["beta"] = self.beta
        d["beta_hat"] = self.beta_hat
        return d


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def C0h_of(mesh: TriMesh) -> float:
    """``C0 h = max_K h_K / j_{1,1}`` (independent of the h convention)."""
    return float(mesh.h_K.max() / J11)


def diff_field(u_h: Field, p_h: Flux) -> VectorField:
    return gradient_field(u_h) - flux_field(p_h)


def projection_residual(f, f_proj: Field, singular_point=None, degree: int = 10,
                        levels: int = CORNER_LEVELS) -> float:
    """``||f - pi_h f||_Omega`` with a degree-``degree`` rule (graded at ``singular_point``)."""
    mesh = f_proj.mesh
    q = element_quadrature(mesh, degree, singular_point, levels=levels)
    xy = q.physical(mesh)
    r = np.asarray(f(xy[:, 0], xy[:, 1]), float) - f_proj(q.elements, q.bary)
    return math.sqrt(max(float(np.dot(q.weights, r * r)), 0.0))


def equilibration_defect(p_h: Flux, f_proj: Field) -> float:
    """``max |div p_h + pi_h f|`` over degree-2 points of every element, relative to ``max |pi_h f|``."""
    mesh = p_h.mesh
    q = element_quadrature(mesh, 2)
    d = p_h.div(q.elements, q.bary) + f_proj(q.elements, q.bary)
    scale = max(float(np.abs(f_proj.coefficients).max(initial=0.0)), 1e-300)
    return float(np.abs(d).max()) / scale


def check_equilibrated(p_h: Flux, f_proj: Field, problem: ProblemSpec | None = None, tol: float = 1e-11):
    defect = equilibration_defect(p_h, f_proj)
    if defect > tol and np.abs(f_proj.coefficients).max(initial=0.0) > 0:
        raise EquilibrationError(f"div p_h + pi_h f = {defect:.2e} (relative) exceeds {tol:.0e}")
    mesh = p_h.mesh
    if len(mesh.neumann_edges):
        g_N = (problem.g_N if problem is not None else None) or (lambda x, y: 0.0 * x)
        want = p_h.space.boundary_dof_values(mesh.neumann_edges, g_N).ravel()
        have = p_h.coefficients[p_h.space.edge_dof_indices(mesh.neumann_edges).ravel()]
        if np.abs(want - have).max() > 1e-12 * max(1.0, np.abs(want).max()):
            raise EquilibrationError("p_h . n does not match the Neumann data")


def _l2(g: VectorField, mesh: TriMesh) -> float:
    return full_norm(g, mesh, max(2 * g.degree, 1))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalEstimate:
    E_hat_G: float
    residual: float
    C0_term: float


def estimate_global(u_h: Field, p_h: Flux, problem: ProblemSpec, f_proj: Field | None = None,
                    C0_term: float | None = None) -> GlobalEstimate:
    """``||grad u_h - p_h|| + C0h ||f - pi_h f||`` after checking equilibration."""
    mesh = u_h.mesh
    if f_proj is None:
        f_proj = project_pi(problem.f, DiscontinuousSpace(mesh, p_h.space.degree), singular_point=problem.singular_point)
    check_equilibrated(p_h, f_proj, problem)
    res = _l2(diff_field(u_h, p_h), mesh)
    if C0_term is None:
        C0_term = C0h_of(mesh) * projection_residual(problem.f, f_proj, problem.singular_point)
    return GlobalEstimate(res + C0_term, res, C0_term)


def _c_factor(consts: ConstantsReport, alpha: WeightFn) -> float:
    return TWO_SQRT2 * consts.C_h * alpha.grad_linf


def estimate_local(u_h: Field, p_h: Flux, alpha: WeightFn, consts: ConstantsReport, problem: ProblemSpec,
                   f_proj: Field | None = None) -> EstimatorReport:
    """Local bound on ``||grad(u - u_h)||_S`` together with the global bound."""
    mesh = u_h.mesh
    if f_proj is None:
        f_proj = project_pi(problem.f, DiscontinuousSpace(mesh, 0), singular_point=problem.singular_point)
    g = estimate_global(u_h, p_h, problem, f_proj)
    wn = weighted_seminorm(diff_field(u_h, p_h), alpha, mesh)
    E1 = wn.value + g.C0_term
    E2 = math.sqrt(_c_factor(consts, alpha)) * g.residual
    rep = EstimatorReport(
        h=consts.h_used, kappa_h=consts.kappa_h, C_h=consts.C_h, C0h=C0h_of(mesh), C0_term=g.C0_term,
        E1=E1, E2=E2, E_hat_L=math.hypot(E1, E2) + 2.0 * g.C0_term, E_hat_G=g.E_hat_G,
        residual_alpha=wn.value, residual_global=g.residual, epsilon=alpha.epsilon,
        certified=wn.certified,
    )
    if not wn.certified:
        rep.notes.append("weighted norm used fallback quadrature")
    return rep


@dataclass(frozen=True)
class AuxEstimate:
    E1_bar: float
    E2_bar: float
    bound: float


def estimate_local_aux(ubar_h: Field, p_h: Flux, alpha: WeightFn, consts: ConstantsReport, problem: ProblemSpec,
                       f_proj: Field | None = None) -> AuxEstimate:
    """Bound on ``||grad(u - ubar_h)||_S`` where ``ubar_h`` solves with the projected load."""
    mesh = ubar_h.mesh
    if f_proj is None:
        f_proj = project_pi(problem.f, DiscontinuousSpace(mesh, 0), singular_point=problem.singular_point)
    check_equilibrated(p_h, f_proj, problem)
    d = diff_field(ubar_h, p_h)
    E1b = weighted_seminorm(d, alpha, mesh).value
    E2b = math.sqrt(_c_factor(consts, alpha)) * _l2(d, mesh)
    C0_term = C0h_of(mesh) * projection_residual(problem.f, f_proj, problem.singular_point)
    return AuxEstimate(E1b, E2b, math.hypot(E1b, E2b) + C0_term)


def estimate_local_improved(u_h: Field, p_tilde: Flux, w_bar: Field, alpha: WeightFn, consts: ConstantsReport,
                            problem: ProblemSpec, p_h: Flux | None = None, f_proj0: Field | None = None,
                            f_proj1: Field | None = None) -> EstimatorReport:
    """Local bound with the geometric-mean global term.

    ``E2 = sqrt(2 sqrt(2) C(h) / eps * ||grad u_h - pt_h|| * ||grad wbar_h - pt_h||)``.
    ``E1`` and the C0 terms are those of :func:`estimate_local` with the
    lowest-order flux ``p_h`` when given (otherwise ``pt_h`` is used).
    """
    mesh = u_h.mesh
    if u_h.space.degree == w_bar.space.degree and p_tilde.space.degree == 0:
        # lowest order: the geometric mean collapses onto the plain term
        base = estimate_local(u_h, p_tilde, alpha, consts, problem, f_proj0)
        return base
    if p_tilde.space.degree != w_bar.space.degree - 1:
        raise ValueError("pt_h must be RT_{k-1} for a degree-k wbar_h")
    if f_proj1 is None:
        f_proj1 = project_pi(problem.f, DiscontinuousSpace(mesh, p_tilde.space.degree),
                             singular_point=problem.singular_point)
    if f_proj1.space.degree != p_tilde.space.degree:
        raise ValueError("projection degree of pt_h does not match its RT degree")
    check_equilibrated(p_tilde, f_proj1, problem)
    base = estimate_local(u_h, p_h if p_h is not None else p_tilde, alpha, consts, problem,
                          f_proj0 if p_h is not None else f_proj1)
    a = _l2(diff_field(u_h, p_tilde), mesh)
    b = _l2(diff_field(w_bar, p_tilde), mesh)
    base.E2 = math.sqrt(_c_factor(consts, alpha) * a * b)
    base.E_hat_L = math.hypot(base.E1, base.E2) + 2.0 * base.C0_term
    base.variant = "improved_k2"
    return base


# ---------------------------------------------------------------------------
# true errors
# ---------------------------------------------------------------------------


def _sq_integral(g, quad) -> float:
    v = g(quad.elements, quad.bary)
    return float(np.dot(quad.weights, np.einsum("mk,mk->m", v, v)))


def true_errors(u_h: Field, grad_u, mesh: TriMesh, S, singular_point=None, rtol: float = 1e-6,
                degree: int = 10, levels: int = 8, max_levels: int = 24,
                atol: float = 1e-13) -> tuple[float, float]:
    """``(||grad(u - u_h)||_S, ||grad(u - u_h)||_Omega)`` by quadrature.

    Near ``singular_point`` elements are graded geometrically and the result
    with ``L`` levels is compared with ``L + 2`` levels, starting from
    ``levels`` and increasing until the two agree to ``rtol`` (plus ``atol``,
    so that round-off on an exactly reproduced solution is accepted).  Without a
    singular point a degree-8 rule is compared with the degree-``degree``
    one.  Failure to agree raises :class:`QuadratureError`.
    """
    err = exact_gradient_field(mesh, grad_u) - gradient_field(u_h)

    def both(lv, deg):
        qG = element_quadrature(mesh, deg, singular_point, levels=lv)
        qS = rect_quadrature(mesh, S, deg, singular_point, lv).quad
        return math.sqrt(_sq_integral(err, qS)), math.sqrt(_sq_integral(err, qG))

    def close(a, b):
        return all(abs(x - y) <= rtol * y + atol for x, y in zip(a, b))

    if singular_point is None:
        coarse, fine = both(levels, 8), both(levels, degree)
        if not close(coarse, fine):
            raise QuadratureError(f"quadrature not converged: {coarse} vs {fine}")
        return fine
    lv = levels
    coarse = both(lv, degree)
    while lv + 2 <= max_levels:
        fine = both(lv + 2, degree)
        if close(coarse, fine):
            if lv != levels:
                log.info("corner grading needed %d levels", lv + 2)
            return fine
        lv += 2
        coarse = fine
    raise QuadratureError(f"corner quadrature not converged with {max_levels} levels: {coarse}")


# ---------------------------------------------------------------------------
# orders
# ---------------------------------------------------------------------------


def convergence_order(hs, values) -> float:
    """Least-squares slope of ``log(value)`` against ``log(h)``."""
    hs = np.asarray(hs, float)
    v = np.asarray(values, float)
    if len(hs) < 2:
        raise ValueError("need at least two points")
    if np.any(v <= 0) or np.any(hs <= 0):
        raise ValueError("values and h must be positive")
    A = np.vstack([np.log(hs), np.ones_like(hs)]).T
    slope, _ = np.linalg.lstsq(A, np.log(v), rcond=None)[0]
    return float(slope)


def successive_orders(hs, values) -> list[float]:
    hs = np.asarray(hs, float)
    v = np.asarray(values, float)
    return [float(np.log(v[i] / v[i - 1]) / np.log(hs[i] / hs[i - 1])) for i in range(1, len(v))]


def convergence_orders(reports, columns=("E1", "E2", "EhatL", "EhatG", "E_L")) -> dict:
    """Least-squares slopes per column; columns with non-positive entries are skipped (value None)."""
    reports = list(reports)
    if len(reports) < 3:
        raise ValueError("need at least three reports")
    hs = [r.h for r in reports]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("reports must be ordered by strictly decreasing h")
    out = {}
    for c in columns:
        vals = [r.row()[c] if c in r.row() else getattr(r, c) for r in reports]
        if any((not np.isfinite(v)) or v <= 0 for v in vals):
            out[c] = None
            continue
        out[c] = convergence_order(hs, vals)
    return out


# ---------------------------------------------------------------------------
# one-call driver
# ---------------------------------------------------------------------------


def compute_report(problem: ProblemSpec, mesh: TriMesh, S, epsilon: float, variant: str = "rt0",
                   consts: ConstantsReport | None = None, kappa_method: str = "auto", with_aux: bool = True,
                   with_true: bool = True, h: float | None = None) -> EstimatorReport:
    """Solve, certify and estimate on one mesh."""
    from .weight import make_weight

    alpha = make_weight(S, epsilon, mesh)
    consts = consts or compute_constants(mesh, h=h, method=kappa_method)
    sp_ = problem.singular_point
    f0 = project_pi(problem.f, DiscontinuousSpace(mesh, 0), singular_point=sp_)
    u_h = solve_conforming(problem, mesh, 1, "exact_f")
    p_h, _ = solve_mixed(problem, mesh, 0, f_proj=f0)
    if variant == "rt0":
        rep = estimate_local(u_h, p_h, alpha, consts, problem, f0)
    elif variant == "improved_k2":
        f1 = project_pi(problem.f, DiscontinuousSpace(mesh, 1), singular_point=sp_)
        pt, _ = solve_mixed(problem, mesh, 1, f_proj=f1)
        w_bar = solve_conforming(problem, mesh, 2, "pi_h_f", f_proj=f1)
        rep = estimate_local_improved(u_h, pt, w_bar, alpha, consts, problem, p_h=p_h, f_proj0=f0, f_proj1=f1)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if with_aux:
        ubar = solve_conforming(problem, mesh, 1, "pi_h_f", f_proj=f0)
        aux = estimate_local_aux(ubar, p_h, alpha, consts, problem, f0)
        rep.E1_bar, rep.E2_bar, rep.bound_aux = aux.E1_bar, aux.E2_bar, aux.bound
    if with_true and problem.grad_u is not None:
        rep.E_L, rep.E_G = true_errors(u_h, problem.grad_u, mesh, alpha.S, sp_)
    return rep
