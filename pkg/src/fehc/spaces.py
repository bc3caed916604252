"""Finite element spaces, element quadrature and the piecewise-polynomial projection.

Three families are provided on a :class:`~fehc.mesh.TriMesh`:

* ``lagrange`` of degree 1 or 2 (continuous, nodal),
* ``discontinuous`` of degree 0 or 1 (barycentric basis per element),
* ``raviart_thomas`` of degree 0 or 1.

Raviart-Thomas local bases are obtained by inverting, element by element, the
matrix of degrees of freedom applied to a scaled monomial basis.  Edge dofs
are normal moments against the endpoint hat functions of the edge (RT1) or
the total normal flux (RT0), taken with the global edge normal; RT1 adds the
two mean values of the field over the element.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import TriMesh
from .quadrature import QuadratureRule, gauss_line, quadrature_rule

# grading depth at a singular vertex; r^(-2/3) integrands need about 16
# levels for 1e-8 relative accuracy with the degree-10 rule
CORNER_LEVELS = 16

_CHUNK = 1 << 16


@dataclass(frozen=True)
class QuadPoints:
    """Flat list of quadrature points; ``weights`` already include the element area."""

    elements: np.ndarray
    bary: np.ndarray
    weights: np.ndarray

    def physical(self, mesh: TriMesh) -> np.ndarray:
        return mesh.to_physical(self.elements, self.bary)


def _corner_subrule(rule: QuadratureRule, corner: int, levels: int):
    """Composite rule on the reference element graded towards local vertex ``corner``.

    The element is red-refined ``levels`` times around the corner; every
    child away from the corner receives ``rule`` and the final corner child
    does too.  Returns barycentric points (relative to the parent) and
    weights summing to one.
    """
    pts, wts = [], []
    tri = np.eye(3)  # rows are barycentric coordinates of the current vertices
    # put the singular vertex first
    order = [corner, (corner + 1) % 3, (corner + 2) % 3]
    tri = tri[order]
    scale = 1.0
    for level in range(levels + 1):
        a, b, c = tri
        ab, ac, bc = 0.5 * (a + b), 0.5 * (a + c), 0.5 * (b + c)
        children = [(ab, b, bc), (ac, bc, c), (ab, bc, ac)]
        if level == levels:
            children = [(a, b, c)]
            child_scale = scale
        else:
            child_scale = scale / 4.0
        for ch in children:
            ch = np.array(ch)
            pts.append(rule.points @ ch)
            wts.append(rule.weights * child_scale)
        tri = np.array([a, ab, ac])
        scale /= 4.0
    return np.vstack(pts), np.concatenate(wts)


def element_quadrature(
    mesh: TriMesh,
    degree: int,
    singular_point=None,
    levels: int = CORNER_LEVELS,
    elements: np.ndarray | None = None,
) -> QuadPoints:
    """Quadrature points on every element (or on ``elements``).

    Elements having ``singular_point`` as a vertex get a composite rule
    graded geometrically towards that vertex (area ratio 1/4 per level).
    """
    rule = quadrature_rule(degree)
    if elements is None:
        elements = np.arange(mesh.nt)
    elements = np.asarray(elements, dtype=np.int64)
    nq = len(rule)
    el = np.repeat(elements, nq)
    bary = np.tile(rule.points, (len(elements), 1))
    w = np.repeat(mesh.areas[elements], nq) * np.tile(rule.weights, len(elements))
    if singular_point is None:
        return QuadPoints(el, bary, w)

    sp = np.asarray(singular_point, dtype=float)
    tv = mesh.vertices[mesh.triangles[elements]]
    hit = np.all(np.abs(tv - sp) < 1e-14, axis=2)
    special = np.flatnonzero(hit.any(axis=1))
    if len(special) == 0:
        return QuadPoints(el, bary, w)
    keep = ~np.isin(np.repeat(np.arange(len(elements)), nq), special)
    parts_e, parts_b, parts_w = [el[keep]], [bary[keep]], [w[keep]]
    for s in special:
        corner = int(np.argmax(hit[s]))
        p, ww = _corner_subrule(rule, corner, levels)
        k = elements[s]
        parts_e.append(np.full(len(ww), k))
        parts_b.append(p)
        parts_w.append(ww * mesh.areas[k])
    return QuadPoints(np.concatenate(parts_e), np.vstack(parts_b), np.concatenate(parts_w))


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------


class Space:
    """Common interface of the finite element spaces.

    Subclasses define ``dof_count``, ``nloc``, ``element_dofs`` (nt, nloc)
    and the local basis evaluation routines.
    """

    family: str
    degree: int
    mesh: TriMesh
    mean_zero_constrained: bool = False

    def element_signs(self) -> np.ndarray:
        return np.ones((self.mesh.nt, self.nloc))

    # values at (elements, bary) pairs, shape (m, nloc[, 2])
    def basis(self, elements, bary):
        raise NotImplementedError

    def coefficients_at(self, coeffs, elements):
        c = np.asarray(coeffs)[self.element_dofs[elements]]
        return c * self.element_signs()[elements]

    def eval(self, coeffs, elements, bary):
        out = []
        for s in range(0, len(elements), _CHUNK):
            e, b = elements[s:s + _CHUNK], bary[s:s + _CHUNK]
            B = self.basis(e, b)
            c = self.coefficients_at(coeffs, e)
            out.append(np.einsum("mi,mi...->m...", c, B))
        return np.concatenate(out) if out else np.zeros((0,))

    def __repr__(self):
        return f"{type(self).__name__}(degree={self.degree}, dofs={self.dof_count})"


class LagrangeSpace(Space):
    family = "lagrange"

    def __init__(self, mesh: TriMesh, degree: int = 1):
        if degree not in (1, 2):
            raise ValueError("Lagrange degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.nloc = 3 if degree == 1 else 6
        self.mean_zero_constrained = not mesh.has_dirichlet

    @property
    def dof_count(self) -> int:
        return self.mesh.nv + (self.mesh.ne if self.degree == 2 else 0)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        if self.degree == 1:
            return self.mesh.triangles
        return np.hstack([self.mesh.triangles, self.mesh.nv + self.mesh.tri_edges])

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        d = self.mesh.dirichlet_vertices
        if self.degree == 2:
            d = np.concatenate([d, self.mesh.nv + self.mesh.dirichlet_edges])
        return d

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        v = self.mesh.vertices
        if self.degree == 1:
            return v
        e = self.mesh.edges
        return np.vstack([v, 0.5 * (v[e[:, 0]] + v[e[:, 1]])])

    def basis(self, elements, bary):
        lam = np.asarray(bary)
        if self.degree == 1:
            return lam.copy()
        l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
        return np.stack(
            [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1],
            axis=1,
        )

    def basis_grad(self, elements, bary):
        G = self.mesh.bary_grads[elements]  # (m, 3, 2)
        if self.degree == 1:
            return G
        lam = np.asarray(bary)[:, :, None]
        out = np.empty((len(elements), 6, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            out[:, i] = (4 * lam[:, i] - 1) * G[:, i]
            out[:, 3 + i] = 4 * (lam[:, j] * G[:, k] + lam[:, k] * G[:, j])
        return out

    def eval_grad(self, coeffs, elements, bary):
        out = []
        for s in range(0, len(elements), _CHUNK):
            e, b = elements[s:s + _CHUNK], bary[s:s + _CHUNK]
            c = np.asarray(coeffs)[self.element_dofs[e]]
            out.append(np.einsum("mi,mik->mk", c, self.basis_grad(e, b)))
        return np.concatenate(out)

    def interpolate(self, func) -> np.ndarray:
        xy = self.dof_coordinates
        return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))


class DiscontinuousSpace(Space):
    family = "discontinuous"

    def __init__(self, mesh: TriMesh, degree: int = 0, mean_zero: bool | None = None):
        if degree not in (0, 1):
            raise ValueError("discontinuous degree must be 0 or 1")
        self.mesh = mesh
        self.degree = degree
        self.nloc = 1 if degree == 0 else 3
        self.mean_zero_constrained = (not mesh.has_dirichlet) if mean_zero is None else mean_zero

    @property
    def dof_count(self) -> int:
        return self.mesh.nt * self.nloc

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return np.arange(self.dof_count).reshape(self.mesh.nt, self.nloc)

    def basis(self, elements, bary):
        if self.degree == 0:
            return np.ones((len(elements), 1))
        return np.asarray(bary, dtype=float).copy()

    @cached_property
    def local_mass_inverse(self) -> np.ndarray:
        a = self.mesh.areas
        if self.degree == 0:
            return (1.0 / a)[:, None, None]
        return (3.0 / a)[:, None, None] * (4 * np.eye(3) - np.ones((3, 3)))[None]

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        """Integral of each basis function, indexed by dof."""
        return np.repeat(self.mesh.areas / self.nloc, self.nloc)

    def mass_diagonal_blocks(self) -> np.ndarray:
        a = self.mesh.areas
        if self.degree == 0:
            return a[:, None, None]
        return (a / 12.0)[:, None, None] * (np.eye(3) + np.ones((3, 3)))[None]


class RaviartThomasSpace(Space):
    family = "raviart_thomas"

    def __init__(self, mesh: TriMesh, degree: int = 0):
        if degree not in (0, 1):
            raise ValueError("Raviart-Thomas degree must be 0 or 1")
        self.mesh = mesh
        self.degree = degree
        self.nloc = 3 if degree == 0 else 8
        self.mean_zero_constrained = False

    @property
    def dof_count(self) -> int:
        m = self.mesh
        return m.ne if self.degree == 0 else 2 * m.ne + 2 * m.nt

    @property
    def edge_dofs_per_edge(self) -> int:
        return self.degree + 1

    @cached_property
    def element_dofs(self) -> np.ndarray:
        m = self.mesh
        if self.degree == 0:
            return m.tri_edges
        te = m.tri_edges
        cols = [2 * te[:, i // 2] + (i % 2) for i in range(6)]
        interior = 2 * m.ne + 2 * np.arange(m.nt)
        cols += [interior, interior + 1]
        return np.stack(cols, axis=1)

    @cached_property
    def _signs(self) -> np.ndarray:
        s = self.mesh.tri_edge_sign.astype(float)
        if self.degree == 0:
            return s
        return np.hstack([np.repeat(s, 2, axis=1), np.ones((self.mesh.nt, 2))])

    def element_signs(self) -> np.ndarray:
        return self._signs

    @cached_property
    def _scaling(self):
        m = self.mesh
        centroid = m.vertices[m.triangles].mean(axis=1)
        return centroid, m.h_K

    def _monomials(self, elements, xy):
        c, h = self._scaling
        X = (xy[:, 0] - c[elements, 0]) / h[elements]
        Y = (xy[:, 1] - c[elements, 1]) / h[elements]
        one, zero = np.ones_like(X), np.zeros_like(X)
        if self.degree == 0:
            comps = [(one, zero), (zero, one), (X, Y)]
        else:
            comps = [(one, zero), (X, zero), (Y, zero), (zero, one), (zero, X), (zero, Y),
                     (X * X, X * Y), (X * Y, Y * Y)]
        return np.stack([np.stack(p, axis=1) for p in comps], axis=1)  # (m, nmono, 2)

    def _monomial_div(self, elements, xy):
        c, h = self._scaling
        hk = h[elements]
        if self.degree == 0:
            return np.stack([0 * hk, 0 * hk, 2.0 / hk], axis=1)
        X = (xy[:, 0] - c[elements, 0]) / hk
        Y = (xy[:, 1] - c[elements, 1]) / hk
        z = np.zeros_like(X)
        return np.stack([z, 1 / hk, z, z, z, 1 / hk, 3 * X / hk, 3 * Y / hk], axis=1)

    @cached_property
    def edge_endpoint_order(self) -> np.ndarray:
        """(nt, 3, 2) vertex ids of each local edge, lower global id first."""
        m = self.mesh
        t = m.triangles
        out = np.empty((m.nt, 3, 2), dtype=np.int64)
        for i in range(3):
            a, b = t[:, (i + 1) % 3], t[:, (i + 2) % 3]
            out[:, i, 0] = np.minimum(a, b)
            out[:, i, 1] = np.maximum(a, b)
        return out

    @cached_property
    def local_coefficients(self) -> np.ndarray:
        """(nt, nmono, nloc): columns are the dual basis in monomial coordinates."""
        m = self.mesh
        nt = m.nt
        k = self.nloc
        D = np.zeros((nt, k, k))
        el = np.arange(nt)
        tq, tw = gauss_line(3)
        ends = self.edge_endpoint_order
        p = m.vertices
        tri = m.triangles
        for i in range(3):
            A = p[ends[:, i, 0]]
            B = p[ends[:, i, 1]]
            a, b = p[tri[:, (i + 1) % 3]], p[tri[:, (i + 2) % 3]]
            t = b - a
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)  # outward, length |e|
            for s, w in zip(tq, tw):
                xy = (1 - s) * A + s * B
                mono = self._monomials(el, xy)
                flux = np.einsum("mjc,mc->mj", mono, n) * w  # includes |e| via n
                if self.degree == 0:
                    D[:, i, :] += flux
                else:
                    D[:, 2 * i, :] += flux * (1 - s)
                    D[:, 2 * i + 1, :] += flux * s
        if self.degree == 1:
            rule = quadrature_rule(2)
            for bq, wq in zip(rule.points, rule.weights):
                xy = np.einsum("i,mik->mk", bq, p[tri])
                mono = self._monomials(el, xy)
                D[:, 6, :] += wq * mono[:, :, 0]
                D[:, 7, :] += wq * mono[:, :, 1]
        return np.linalg.inv(D)

    def basis(self, elements, bary):
        xy = self.mesh.to_physical(elements, bary)
        mono = self._monomials(elements, xy)
        return np.einsum("mjc,mjr->mrc", mono, self.local_coefficients[elements])

    def basis_div(self, elements, bary):
        xy = self.mesh.to_physical(elements, bary)
        d = self._monomial_div(elements, xy)
        return np.einsum("mj,mjr->mr", d, self.local_coefficients[elements])

    def eval_div(self, coeffs, elements, bary):
        out = []
        for s in range(0, len(elements), _CHUNK):
            e, b = elements[s:s + _CHUNK], bary[s:s + _CHUNK]
            c = self.coefficients_at(coeffs, e)
            out.append(np.einsum("mi,mi->m", c, self.basis_div(e, b)))
        return np.concatenate(out)

    def boundary_dof_values(self, edges: np.ndarray, g_n) -> np.ndarray:
        """Dof values on boundary ``edges`` realising the normal trace ``g_n(x, y)``.

        For RT0 this is the edge integral of ``g_n``; for RT1 the moments
        against the two endpoint hats (exact for piecewise-linear data).
        """
        m = self.mesh
        edges = np.asarray(edges, dtype=np.int64)
        A = m.vertices[m.edges[edges, 0]]
        B = m.vertices[m.edges[edges, 1]]
        L = m.edge_lengths[edges]
        tq, tw = gauss_line(4)
        if self.degree == 0:
            vals = np.zeros(len(edges))
            for s, w in zip(tq, tw):
                xy = (1 - s) * A + s * B
                vals += w * L * _as_array(g_n(xy[:, 0], xy[:, 1]), len(edges))
            return vals
        vals = np.zeros((len(edges), 2))
        for s, w in zip(tq, tw):
            xy = (1 - s) * A + s * B
            g = _as_array(g_n(xy[:, 0], xy[:, 1]), len(edges))
            vals[:, 0] += w * L * g * (1 - s)
            vals[:, 1] += w * L * g * s
        return vals

    def edge_dof_indices(self, edges: np.ndarray) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64)
        if self.degree == 0:
            return edges
        return np.stack([2 * edges, 2 * edges + 1], axis=1)


def _as_array(v, n):
    return np.asarray(v, dtype=float) * np.ones(n)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar finite element function: a space and its coefficient vector."""

    space: Space
    coefficients: np.ndarray

    def __call__(self, elements, bary):
        return self.space.eval(self.coefficients, elements, bary)

    def grad(self, elements, bary):
        return self.space.eval_grad(self.coefficients, elements, bary)

    @property
    def mesh(self) -> TriMesh:
        return self.space.mesh


@dataclass(frozen=True, eq=False)
class Flux:
    """Raviart-Thomas vector field."""

    space: RaviartThomasSpace
    coefficients: np.ndarray

    def __call__(self, elements, bary):
        return self.space.eval(self.coefficients, elements, bary)

    def div(self, elements, bary):
        return self.space.eval_div(self.coefficients, elements, bary)

    @property
    def mesh(self) -> TriMesh:
        return self.space.mesh


def evaluate(obj, element: int, bary, kind: str = "value"):
    """Evaluate a field or flux at one barycentric point of one element.

    ``kind`` is ``"value"``, ``"grad"`` (Lagrange fields) or ``"div"`` (fluxes).
    """
    mesh = obj.space.mesh
    if not 0 <= element < mesh.nt:
        raise IndexError(f"element {element} out of range")
    e = np.array([element])
    b = np.asarray(bary, dtype=float).reshape(1, 3)
    if kind == "value":
        r = obj(e, b)
    elif kind == "grad":
        r = obj.grad(e, b)
    elif kind == "div":
        r = obj.div(e, b)
    else:
        raise ValueError(kind)
    return r[0]


class VectorField:
    """Piecewise vector field given by an evaluation callable.

    ``degree`` is the polynomial degree on each element (``None`` for
    non-polynomial data); it selects exact quadrature in the norm routines.
    """

    def __init__(self, func, degree: int | None):
        self.func = func
        self.degree = degree

    def __call__(self, elements, bary):
        return self.func(elements, bary)

    def __sub__(self, other: "VectorField") -> "VectorField":
        deg = None if self.degree is None or other.degree is None else max(self.degree, other.degree)
        return VectorField(lambda e, b: self(e, b) - other(e, b), deg)


def gradient_field(u: Field) -> VectorField:
    return VectorField(u.grad, u.space.degree - 1)


def flux_field(p: Flux) -> VectorField:
    return VectorField(p, p.space.degree + 1)


def exact_gradient_field(mesh: TriMesh, grad) -> VectorField:
    def f(e, b):
        xy = mesh.to_physical(e, b)
        gx, gy = grad(xy[:, 0], xy[:, 1])
        return np.stack([gx, gy], axis=1)

    return VectorField(f, None)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def default_projection_degree(target_degree: int) -> int:
    return min(2 * target_degree + 6, 10)


def project_pi(f, target: DiscontinuousSpace, quad: QuadPoints | None = None, singular_point=None) -> Field:
    """Elementwise L2 projection of ``f(x, y)`` onto a discontinuous space.

    With ``target.mean_zero_constrained`` the global mean of ``f`` must vanish
    (checked to 1e-8) and the mean of the result is removed, which is the
    L2-optimal correction.
    """
    mesh = target.mesh
    if quad is None:
        quad = element_quadrature(mesh, default_projection_degree(target.degree), singular_point)
    xy = quad.physical(mesh)
    vals = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite values of f at quadrature points")
    B = target.basis(quad.elements, quad.bary)
    rhs = np.zeros((mesh.nt, target.nloc))
    for i in range(target.nloc):
        rhs[:, i] = np.bincount(quad.elements, weights=quad.weights * vals * B[:, i], minlength=mesh.nt)
    coef = np.einsum("kij,kj->ki", target.local_mass_inverse, rhs).ravel()
    if target.mean_zero_constrained:
        total = float(np.dot(quad.weights, vals))
        if abs(total) > 1e-8 * max(1.0, float(np.dot(quad.weights, np.abs(vals)))):
            raise ValueError(f"mean-zero projection requested but integral of f is {total:.3e}")
        mean = np.dot(coef, target.basis_integrals) / mesh.total_area()
        coef = coef - mean
    return Field(target, coef)


def project_field(values_fn, target: DiscontinuousSpace, quad: QuadPoints) -> Field:
    """Project a callable of (elements, bary) onto ``target`` (no mean correction)."""
    mesh = target.mesh
    vals = values_fn(quad.elements, quad.bary)
    B = target.basis(quad.elements, quad.bary)
    rhs = np.zeros((mesh.nt, target.nloc))
    for i in range(target.nloc):
        rhs[:, i] = np.bincount(quad.elements, weights=quad.weights * vals * B[:, i], minlength=mesh.nt)
    return Field(target, np.einsum("kij,kj->ki", target.local_mass_inverse, rhs).ravel())


def l2_norm(values_fn, mesh: TriMesh, quad: QuadPoints) -> float:
    """L2 norm of a scalar or vector callable of (elements, bary)."""
    v = values_fn(quad.elements, quad.bary)
    sq = v * v if v.ndim == 1 else np.einsum("mk,mk->m", v, v)
    return float(np.sqrt(np.dot(quad.weights, sq)))


def elementwise_sq_norm(values_fn, mesh: TriMesh, quad: QuadPoints) -> np.ndarray:
    v = values_fn(quad.elements, quad.bary)
    sq = v * v if v.ndim == 1 else np.einsum("mk,mk->m", v, v)
    return np.bincount(quad.elements, weights=quad.weights * sq, minlength=mesh.nt)
