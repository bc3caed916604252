"""Piecewise-linear cutoff weight and exact weighted integration.

The weight for a rectangle ``S = (a, b) x (c, d)`` and band width ``eps`` is

    alpha(x, y) = min(ramp_(a, b)(x), ramp_(c, d)(y)),

where the ramp is 1 on ``[a, b]`` and decays linearly to 0 over a distance
``eps`` on either side.  Its support is the rectangle enlarged by ``eps`` in
each direction (intersected with the domain); that set plays the role of
``Omega'`` below.

``alpha`` is linear on each cell of the arrangement formed by the eight
axis-parallel break lines and the four corner diagonals where the minimum
switches branch.  Elements crossed by any of these lines are clipped into
convex pieces, each piece is fan-triangulated, and a rule of sufficient
degree is applied on every sub-triangle.  For a polynomial integrand the
result is exact up to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh
from .quadrature import quadrature_rule
from .spaces import CORNER_LEVELS, QuadPoints, element_quadrature

log = logging.getLogger(__name__)

Rect = tuple[float, float, float, float]  # (x0, x1, y0, y1)
Line = tuple[float, float, float]  # n_x x + n_y y = c

FALLBACK_DEGREE = 8


def _ramp(t: np.ndarray, lo: float, hi: float, eps: float) -> np.ndarray:
    r = np.minimum(1.0 + (t - lo) / eps, 1.0 - (t - hi) / eps)
    return np.clip(r, 0.0, 1.0)


@dataclass(frozen=True)
class WeightFn:
    """Cutoff ``alpha`` equal to 1 on ``S`` and 0 outside the ``eps``-enlarged rectangle."""

    S: Rect
    epsilon: float

    def __call__(self, x, y) -> np.ndarray:
        a, b, c, d = self.S
        e = self.epsilon
        return np.minimum(_ramp(np.asarray(x, float), a, b, e), _ramp(np.asarray(y, float), c, d, e))

    @property
    def grad_linf(self) -> float:
        return 1.0 / self.epsilon

    @property
    def support(self) -> Rect:
        a, b, c, d = self.S
        e = self.epsilon
        return (a - e, b + e, c - e, d + e)

    @property
    def kink_lines(self) -> list[Line]:
        a, b, c, d = self.S
        e = self.epsilon
        lines: list[Line] = [(1.0, 0.0, v) for v in (a - e, a, b, b + e)]
        lines += [(0.0, 1.0, v) for v in (c - e, c, d, d + e)]
        # corner diagonals where the two ramps are equal
        lines += [
            (1.0, -1.0, a - c),  # lower left: x - a = y - c
            (1.0, 1.0, b + c),   # lower right: b - x = y - c
            (1.0, 1.0, a + d),   # upper left: x - a = d - y
            (1.0, -1.0, b - d),  # upper right: x - b = y - d
        ]
        return lines


def make_weight(S: Rect, epsilon: float, domain: TriMesh | None = None) -> WeightFn:
    """Validate inputs and build the cutoff for subdomain ``S``."""
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    x0, x1, y0, y1 = (float(v) for v in S)
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"S must be a non-degenerate rectangle, got {S!r}")
    if domain is not None:
        bx0, bx1, by0, by1 = domain.bounding_box()
        tol = 1e-12
        if x0 < bx0 - tol or x1 > bx1 + tol or y0 < by0 - tol or y1 > by1 + tol:
            raise ValueError(f"S={S!r} is not contained in the domain bounding box")
        if rect_area_in_mesh(domain, (x0, x1, y0, y1)) <= 0:
            raise ValueError(f"S={S!r} does not intersect the domain")
    return WeightFn((x0, x1, y0, y1), float(epsilon))


def rect_lines(rect: Rect) -> list[Line]:
    x0, x1, y0, y1 = rect
    return [(1.0, 0.0, x0), (1.0, 0.0, x1), (0.0, 1.0, y0), (0.0, 1.0, y1)]


def in_rect(xy: np.ndarray, rect: Rect) -> np.ndarray:
    x0, x1, y0, y1 = rect
    return (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)


# ---------------------------------------------------------------------------
# polygon clipping
# ---------------------------------------------------------------------------


def _split(poly: np.ndarray, line: Line, tol: float):
    """Split a convex polygon by a line; returns the (negative, positive) parts."""
    nx, ny, c = line
    s = poly[:, 0] * nx + poly[:, 1] * ny - c
    s = np.where(np.abs(s) <= tol, 0.0, s)
    if np.all(s >= 0):
        return None, poly
    if np.all(s <= 0):
        return poly, None
    neg, pos = [], []
    k = len(poly)
    for i in range(k):
        P, sp_ = poly[i], s[i]
        Q, sq = poly[(i + 1) % k], s[(i + 1) % k]
        if sp_ <= 0:
            neg.append(P)
        if sp_ >= 0:
            pos.append(P)
        if sp_ * sq < 0:
            X = P + (sp_ / (sp_ - sq)) * (Q - P)
            neg.append(X)
            pos.append(X)
    return np.array(neg), np.array(pos)


def _poly_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_element(tri: np.ndarray, lines: list[Line], tol: float) -> list[np.ndarray]:
    """Convex pieces of a triangle cut by ``lines`` (lines missing it are ignored)."""
    pieces = [tri]
    for ln in lines:
        nxt = []
        for p in pieces:
            a, b = _split(p, ln, tol)
            nxt.extend(q for q in (a, b) if q is not None and len(q) >= 3)
        pieces = nxt
    return pieces


def _crossed(mesh: TriMesh, elements: np.ndarray, lines: list[Line], tol: float) -> np.ndarray:
    """Boolean (len(elements),) mask of elements whose interior meets some line."""
    V = mesh.vertices[mesh.triangles[elements]]  # (m, 3, 2)
    out = np.zeros(len(elements), dtype=bool)
    for nx, ny, c in lines:
        s = V[:, :, 0] * nx + V[:, :, 1] * ny - c
        out |= (s.max(axis=1) > tol) & (s.min(axis=1) < -tol)
    return out


@dataclass(frozen=True)
class ClippedQuadrature:
    quad: QuadPoints
    elements_clipped: int
    fallback_elements: int


def clipped_quadrature(
    mesh: TriMesh,
    lines: list[Line],
    degree: int,
    elements: np.ndarray | None = None,
    singular_point=None,
    levels: int = CORNER_LEVELS,
) -> ClippedQuadrature:
    """Quadrature on ``elements`` refined along ``lines``.

    Elements not crossed by any line get the plain degree-``degree`` rule
    (graded at ``singular_point`` if they touch it).  Crossed elements are
    split into convex pieces which are fan-triangulated.  If the pieces of
    an element fail to tile it (degenerate geometry) that element falls
    back to a plain degree-8 rule and is counted in ``fallback_elements``.
    """
    if elements is None:
        elements = np.arange(mesh.nt)
    elements = np.asarray(elements, dtype=np.int64)
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    tol = 1e-13 * scale
    cut = _crossed(mesh, elements, lines, tol)
    plain = element_quadrature(mesh, degree, singular_point, levels=levels, elements=elements[~cut])
    rule = quadrature_rule(degree)
    E, B, W = [plain.elements], [plain.bary], [plain.weights]
    fallback = []
    for k in elements[cut]:
        tri = mesh.vertices[mesh.triangles[k]]
        pieces = clip_element(tri, lines, tol)
        area = mesh.areas[k]
        pts, wts = [], []
        total = 0.0
        for p in pieces:
            for j in range(1, len(p) - 1):
                t = np.array([p[0], p[j], p[j + 1]])
                a = _poly_area(t)
                if a <= 0:
                    continue
                total += a
                pts.append(rule.points @ t)
                wts.append(rule.weights * a)
        if not pts or abs(total - area) > 1e-10 * area:
            fallback.append(k)
            continue
        xy = np.vstack(pts)
        kk = np.full(len(xy), k)
        E.append(kk)
        B.append(mesh.to_bary(kk, xy))
        W.append(np.concatenate(wts))
    if fallback:
        log.warning("clipping failed on %d element(s); using degree-%d quadrature", len(fallback), FALLBACK_DEGREE)
        fq = element_quadrature(mesh, FALLBACK_DEGREE, elements=np.array(fallback))
        E.append(fq.elements)
        B.append(fq.bary)
        W.append(fq.weights)
    quad = QuadPoints(np.concatenate(E), np.vstack(B), np.concatenate(W))
    return ClippedQuadrature(quad, int(cut.sum()), len(fallback))


def elements_meeting(mesh: TriMesh, rect: Rect) -> np.ndarray:
    """Elements whose closure overlaps the open rectangle (bounding-box test)."""
    V = mesh.vertices[mesh.triangles]
    x0, x1, y0, y1 = rect
    lo, hi = V.min(axis=1), V.max(axis=1)
    mask = (hi[:, 0] > x0) & (lo[:, 0] < x1) & (hi[:, 1] > y0) & (lo[:, 1] < y1)
    return np.flatnonzero(mask)


def rect_quadrature(mesh: TriMesh, rect: Rect, degree: int, singular_point=None,
                    levels: int = CORNER_LEVELS) -> ClippedQuadrature:
    """Quadrature over ``rect`` intersected with the mesh domain."""
    cand = elements_meeting(mesh, rect)
    cq = clipped_quadrature(mesh, rect_lines(rect), degree, cand, singular_point, levels)
    q = cq.quad
    keep = in_rect(q.physical(mesh), rect)
    return ClippedQuadrature(QuadPoints(q.elements[keep], q.bary[keep], q.weights[keep]),
                             cq.elements_clipped, cq.fallback_elements)


def rect_area_in_mesh(mesh: TriMesh, rect: Rect) -> float:
    return float(rect_quadrature(mesh, rect, 1).quad.weights.sum())


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedNormResult:
    value: float
    integration_mode: str  # "exact_clipped" or "quadrature_fallback"
    elements_clipped: int

    @property
    def certified(self) -> bool:
        return self.integration_mode == "exact_clipped"


def _sq(v: np.ndarray) -> np.ndarray:
    return v * v if v.ndim == 1 else np.einsum("mk,mk->m", v, v)


def _integrand_degree(g, degree):
    if degree is not None:
        return degree
    d = getattr(g, "degree", None)
    if d is None:
        raise ValueError("integrand degree unknown; pass degree explicitly")
    return d


def alpha_quadrature(mesh: TriMesh, alpha: WeightFn, degree: int) -> ClippedQuadrature:
    """Points and weights (with ``alpha`` folded in) exact for ``alpha * q``, deg q <= ``degree``."""
    cand = elements_meeting(mesh, alpha.support)
    cq = clipped_quadrature(mesh, alpha.kink_lines, min(degree + 1, 10), cand)
    q = cq.quad
    xy = q.physical(mesh)
    a = alpha(xy[:, 0], xy[:, 1])
    keep = a > 0
    return ClippedQuadrature(QuadPoints(q.elements[keep], q.bary[keep], q.weights[keep] * a[keep]),
                             cq.elements_clipped, cq.fallback_elements)


def weighted_seminorm(grad_diff, alpha: WeightFn, mesh: TriMesh | None = None,
                      degree: int | None = None) -> WeightedNormResult:
    """``sqrt(int alpha |g|^2)`` for a piecewise-polynomial ``g`` of the given degree.

    ``grad_diff`` is a callable of ``(elements, bary)`` (a
    :class:`~fehc.spaces.VectorField` carries its own degree).
    """
    if mesh is None:
        mesh = _mesh_of(grad_diff)
    deg = _integrand_degree(grad_diff, degree)
    cq = alpha_quadrature(mesh, alpha, 2 * deg)
    q = cq.quad
    val = float(np.dot(q.weights, _sq(grad_diff(q.elements, q.bary)))) if len(q.weights) else 0.0
    mode = "exact_clipped" if cq.fallback_elements == 0 else "quadrature_fallback"
    return WeightedNormResult(math.sqrt(max(val, 0.0)), mode, cq.elements_clipped)


def rect_norm(g, mesh: TriMesh, rect: Rect, degree: int, singular_point=None) -> float:
    """L2 norm of ``g`` over ``rect`` intersected with the domain, with quadrature degree ``degree``."""
    q = rect_quadrature(mesh, rect, degree, singular_point).quad
    if len(q.weights) == 0:
        return 0.0
    return math.sqrt(max(float(np.dot(q.weights, _sq(g(q.elements, q.bary)))), 0.0))


def full_norm(g, mesh: TriMesh, degree: int, singular_point=None) -> float:
    q = element_quadrature(mesh, degree, singular_point)
    return math.sqrt(max(float(np.dot(q.weights, _sq(g(q.elements, q.bary)))), 0.0))


@dataclass(frozen=True)
class NormChain:
    S: float
    alpha: float
    omega_prime: float
    omega: float

    def holds(self, rtol: float = 1e-12) -> bool:
        t = rtol * max(self.omega, 1e-300)
        return self.S <= self.alpha + t and self.alpha <= self.omega_prime + t and self.omega_prime <= self.omega + t


def norm_chain(g, alpha: WeightFn, mesh: TriMesh | None = None, degree: int | None = None) -> NormChain:
    """``(||g||_S, ||g||_alpha, ||g||_Omega', ||g||_Omega)`` for a polynomial integrand."""
    if mesh is None:
        mesh = _mesh_of(g)
    deg = 2 * _integrand_degree(g, degree)
    d = min(max(deg, 1), 10)
    return NormChain(
        rect_norm(g, mesh, alpha.S, d),
        weighted_seminorm(g, alpha, mesh, degree).value,
        rect_norm(g, mesh, alpha.support, d),
        full_norm(g, mesh, d),
    )


def _mesh_of(g) -> TriMesh:
    m = getattr(g, "mesh", None)
    if m is None:
        raise ValueError("mesh required")
    return m
