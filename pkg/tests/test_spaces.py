import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehc.mesh import build_uniform_lshape, build_uniform_square, refine_locally
from fehc.quadrature import gauss_line
from fehc.spaces import (
    DiscontinuousSpace,
    Field,
    Flux,
    LagrangeSpace,
    RaviartThomasSpace,
    element_quadrature,
    l2_norm,
    project_field,
    project_pi,
)

MESHES = {
    "square4": lambda: build_uniform_square(4),
    "lshape4": lambda: build_uniform_lshape(4),
    "graded": lambda: refine_locally(build_uniform_square(3), (0.0, 0.5, 0.0, 0.5), 2),
}
mesh_names = st.sampled_from(sorted(MESHES))


def random_bary(rng, m):
    b = rng.dirichlet(np.ones(3), size=m)
    return b


@given(mesh_names, st.integers(0, 2**32 - 1))
def test_partition_of_unity(name, seed):
    mesh = MESHES[name]()
    rng = np.random.default_rng(seed)
    el = rng.integers(0, mesh.nt, 40)
    b = random_bary(rng, 40)
    for space in (LagrangeSpace(mesh, 1), LagrangeSpace(mesh, 2)):
        assert np.allclose(space.basis(el, b).sum(axis=1), 1.0, atol=1e-14)
        assert np.allclose(space.basis_grad(el, b).sum(axis=1), 0.0, atol=1e-10)
    for deg in (0, 1):
        dg = DiscontinuousSpace(mesh, deg)
        assert np.allclose(dg.basis(el, b).sum(axis=1), 1.0, atol=1e-14)


def edge_points(mesh, e, s):
    a, b = mesh.vertices[mesh.edges[e]]
    return (1 - s)[:, None] * a + s[:, None] * b


@given(mesh_names, st.sampled_from([0, 1]), st.integers(0, 2**32 - 1))
def test_rt_normal_trace_continuity(name, degree, seed):
    mesh = MESHES[name]()
    rng = np.random.default_rng(seed)
    rt = RaviartThomasSpace(mesh, degree)
    p = Flux(rt, rng.standard_normal(rt.dof_count))
    s = np.array([0.1, 0.37, 0.5, 0.81])
    interior = np.flatnonzero(mesh.edge_tris[:, 1] >= 0)
    for e in rng.choice(interior, size=min(12, len(interior)), replace=False):
        xy = edge_points(mesh, e, s)
        a, b = mesh.vertices[mesh.edges[e]]
        n = np.array([b[1] - a[1], a[0] - b[0]]) / np.hypot(*(b - a))
        traces = []
        for k in mesh.edge_tris[e]:
            el = np.full(len(s), k)
            traces.append(p(el, mesh.to_bary(el, xy)) @ n)
        assert np.allclose(traces[0], traces[1], atol=1e-11 * (1 + np.abs(traces[0]).max()))


@given(mesh_names, st.sampled_from([0, 1]), st.integers(0, 2**32 - 1))
def test_rt_dofs_are_edge_moments(name, degree, seed):
    # dof j of element-local edge i equals the flux through that edge (RT0), or the
    # moment against the endpoint hat of the lower-numbered vertex (RT1)
    mesh = MESHES[name]()
    rng = np.random.default_rng(seed)
    rt = RaviartThomasSpace(mesh, degree)
    c = rng.standard_normal(rt.dof_count)
    p = Flux(rt, c)
    k = int(rng.integers(mesh.nt))
    tq, tw = gauss_line(4)
    signs = rt.element_signs()[k]
    dofs = rt.element_dofs[k]
    tri = mesh.triangles[k]
    for i in range(3):
        ends = np.sort([tri[(i + 1) % 3], tri[(i + 2) % 3]])
        A, B = mesh.vertices[ends]
        a, b = mesh.vertices[tri[(i + 1) % 3]], mesh.vertices[tri[(i + 2) % 3]]
        n_out = np.array([b[1] - a[1], a[0] - b[0]])  # outward, length |e|
        xy = (1 - tq)[:, None] * A + tq[:, None] * B
        el = np.full(len(tq), k)
        fl = (p(el, mesh.to_bary(el, xy)) @ n_out) * tw
        if degree == 0:
            assert fl.sum() == pytest.approx(signs[i] * c[dofs[i]], abs=1e-11)
        else:
            assert (fl * (1 - tq)).sum() == pytest.approx(signs[2 * i] * c[dofs[2 * i]], abs=1e-11)
            assert (fl * tq).sum() == pytest.approx(signs[2 * i + 1] * c[dofs[2 * i + 1]], abs=1e-11)


@given(mesh_names, st.sampled_from([0, 1]), st.integers(0, 2**32 - 1))
def test_projection_is_idempotent(name, degree, seed):
    mesh = MESHES[name]()
    rng = np.random.default_rng(seed)
    dg = DiscontinuousSpace(mesh, degree, mean_zero=False)
    quad = element_quadrature(mesh, 6)
    f = lambda x, y: np.sin(3 * x + rng_phase) * np.exp(y)  # noqa: E731
    rng_phase = float(rng.uniform(0, 6))
    once = project_pi(f, dg, quad)
    twice = project_field(once, dg, quad)
    assert np.allclose(twice.coefficients, once.coefficients, atol=1e-12)
    # the residual is orthogonal to the space
    xy = quad.physical(mesh)
    r = f(xy[:, 0], xy[:, 1]) - once(quad.elements, quad.bary)
    B = dg.basis(quad.elements, quad.bary)
    for i in range(dg.nloc):
        mom = np.bincount(quad.elements, weights=quad.weights * r * B[:, i], minlength=mesh.nt)
        assert np.abs(mom).max() < 1e-12


def test_mean_zero_projection_requires_compatible_data():
    mesh = build_uniform_square(4, "N")
    dg = DiscontinuousSpace(mesh, 0)
    assert dg.mean_zero_constrained
    with pytest.raises(ValueError):
        project_pi(lambda x, y: 1.0 + 0 * x, dg)
    g = project_pi(lambda x, y: np.cos(np.pi * x), dg)
    assert abs(np.dot(g.coefficients, dg.basis_integrals)) < 1e-14


def test_projection_rejects_nan():
    mesh = build_uniform_square(2)
    with pytest.raises(ValueError):
        project_pi(lambda x, y: np.full_like(x, np.nan), DiscontinuousSpace(mesh, 0))


@pytest.mark.parametrize(
    "make, expected",
    [
        (lambda m: ("P1", LagrangeSpace(m, 1)), 2.0),
        (lambda m: ("P2", LagrangeSpace(m, 2)), 3.0),
    ],
)
def test_lagrange_interpolation_orders(make, expected):
    u = lambda x, y: np.sin(np.pi * x) * np.cos(2 * y)  # noqa: E731
    errs = []
    for n in (4, 8, 16):
        mesh = build_uniform_square(n)
        _, space = make(mesh)
        fld = Field(space, space.interpolate(u))
        quad = element_quadrature(mesh, 8)

        def diff(e, b, fld=fld, mesh=mesh):
            xy = mesh.to_physical(e, b)
            return u(xy[:, 0], xy[:, 1]) - fld(e, b)

        errs.append(l2_norm(diff, mesh, quad))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders[-1] == pytest.approx(expected, abs=0.1)


@pytest.mark.parametrize("degree", [0, 1])
def test_rt_divergence_matches_flux_through_boundary(degree, rng):
    mesh = build_uniform_square(3)
    rt = RaviartThomasSpace(mesh, degree)
    p = Flux(rt, rng.standard_normal(rt.dof_count))
    quad = element_quadrature(mesh, 4)
    div_int = np.bincount(quad.elements, weights=quad.weights * p.div(quad.elements, quad.bary), minlength=mesh.nt)
    if degree == 0:
        expected = (rt.element_signs() * p.coefficients[rt.element_dofs]).sum(axis=1)
    else:
        expected = (rt.element_signs()[:, :6] * p.coefficients[rt.element_dofs[:, :6]]).sum(axis=1)
    assert np.allclose(div_int, expected, atol=1e-12)
