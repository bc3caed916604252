import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehc.mesh import build_uniform_lshape, build_uniform_square, make_mesh, refine_locally
from fehc.problems import dirichlet_square, neumann_square
from fehc.solve import (
    ConformingSolver,
    MixedSolver,
    ProblemSpec,
    SolverError,
    apply_Rh,
    apply_Th,
    solve_conforming,
    solve_mixed,
)
from fehc.spaces import DiscontinuousSpace, element_quadrature, exact_gradient_field, flux_field, gradient_field
from fehc.weight import full_norm


def mixed_marker_square(n):
    # Neumann on x = 0, Dirichlet elsewhere
    base = build_uniform_square(n)
    return make_mesh(base.vertices, base.triangles, lambda mid: np.where(mid[:, 0] < 1e-12, "N", "D"), "square")


def linear_problem(a=0.7, b=-1.3, c=0.2):
    return ProblemSpec(
        "linear",
        f=lambda x, y: 0.0 * x,
        g_D=lambda x, y: a * x + b * y + c,
        g_N=lambda x, y: -a + 0.0 * x,  # outward normal on x = 0 is (-1, 0)
        u=lambda x, y: a * x + b * y + c,
        grad_u=lambda x, y: (a + 0.0 * x, b + 0.0 * y),
    )


@pytest.mark.parametrize("make", [lambda: build_uniform_square(3), lambda: mixed_marker_square(4),
                                  lambda: refine_locally(build_uniform_square(2), (0, 0.5, 0, 0.5), 1)])
def test_patch_test_reproduces_linear_solution(make):
    mesh = make()
    prob = linear_problem()
    u_h = solve_conforming(prob, mesh)
    xy = mesh.vertices
    assert np.allclose(u_h.coefficients, prob.u(xy[:, 0], xy[:, 1]), atol=1e-12)
    for k in (0, 1):
        p_h, _ = solve_mixed(prob, mesh, k)
        err = flux_field(p_h) - exact_gradient_field(mesh, prob.grad_u)
        err.degree = 2
        assert full_norm(err, mesh, 4) < 1e-11


def dense_mixed(solver, F, g):
    M = solver.M.toarray()
    B = solver.B.toarray()
    n, m = M.shape[0], B.shape[0]
    K = np.block([[M, B.T], [B, np.zeros((m, m))]])
    x = np.linalg.solve(K, np.concatenate([g, -F]))
    return x[:n], x[n:]


@pytest.mark.parametrize("degree", [0, 1])
def test_hybridized_solver_matches_dense_saddle_point(degree, rng):
    mesh = build_uniform_lshape(4)
    solver = MixedSolver(mesh, degree)
    F = rng.standard_normal(solver.nm)
    g = solver.dirichlet_rhs(lambda x, y: np.sin(x) + y)
    p, mu = solver.solve(F, g, check=True)
    p_ref, mu_ref = dense_mixed(solver, F, g)
    assert np.allclose(p, p_ref, atol=1e-10)
    assert np.allclose(mu, mu_ref, atol=1e-10)


@pytest.mark.parametrize("make", [lambda: build_uniform_square(6), lambda: build_uniform_square(6, "N"),
                                  lambda: mixed_marker_square(6), lambda: build_uniform_lshape(6)])
@pytest.mark.parametrize("degree", [0, 1])
def test_random_loads_are_equilibrated(make, degree, rng):
    mesh = make()
    solver = MixedSolver(mesh, degree)
    dg = solver.dg
    F = rng.standard_normal((solver.nm, 3))
    if solver.pure_neumann:
        F -= np.outer(dg.basis_integrals, dg.basis_integrals @ F) / (dg.basis_integrals @ dg.basis_integrals)
    p, _ = solver.solve(F, check=True)
    d = solver.B @ p + F
    assert np.abs(d).max() <= 1e-12 * np.abs(F).max()


def test_incompatible_neumann_data_is_rejected():
    mesh = build_uniform_square(4, "N")
    with pytest.raises(SolverError):
        MixedSolver(mesh, 0).solve(np.ones(mesh.nt))
    with pytest.raises(SolverError):
        ConformingSolver(mesh, 1).solve(np.ones(mesh.nv))


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_solution_operators_are_linear(seed, a, b):
    mesh = build_uniform_square(3)
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal((2, mesh.nt))
    R = lambda x: apply_Rh(x, mesh)  # noqa: E731
    T = lambda x: apply_Th(x, mesh).coefficients  # noqa: E731
    tol = 1e-11 * (1 + abs(a) + abs(b))
    assert np.allclose(R(a * f + b * g), a * R(f) + b * R(g), atol=tol)
    assert np.allclose(T(a * f + b * g), a * T(f) + b * T(g), atol=tol)
    batch = apply_Rh(np.stack([f, g], axis=1), mesh)
    assert np.allclose(batch[:, :, 0], R(f)) and np.allclose(batch[:, :, 1], R(g))


def energy_error(problem, mesh, degree):
    u_h = solve_conforming(problem, mesh, degree)
    return full_norm(exact_gradient_field(mesh, problem.grad_u) - gradient_field(u_h), mesh, 8)


def flux_error(problem, mesh, degree):
    p_h, _ = solve_mixed(problem, mesh, degree)
    return full_norm(exact_gradient_field(mesh, problem.grad_u) - flux_field(p_h), mesh, 8)


@pytest.mark.parametrize("problem", [dirichlet_square, neumann_square])
@pytest.mark.parametrize("kind, degree, expected", [("energy", 1, 1.0), ("energy", 2, 2.0),
                                                     ("flux", 0, 1.0), ("flux", 1, 2.0)])
def test_convergence_orders(problem, kind, degree, expected):
    prob = problem()
    fn = energy_error if kind == "energy" else flux_error
    e = [fn(prob, build_uniform_square(n, prob.meta["bc"]), degree) for n in (8, 16)]
    assert np.log2(e[0] / e[1]) == pytest.approx(expected, abs=0.1)


def test_mixed_multiplier_approximates_solution():
    prob = dirichlet_square()
    errs = []
    for n in (8, 16):
        mesh = build_uniform_square(n)
        _, mu = solve_mixed(prob, mesh, 0)
        q = element_quadrature(mesh, 6)
        xy = q.physical(mesh)
        r = mu(q.elements, q.bary) - prob.u(xy[:, 0], xy[:, 1])
        errs.append(np.sqrt(np.dot(q.weights, r * r)))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(1.0, abs=0.1)


def test_pi_h_f_mode_needs_matching_degree():
    mesh = build_uniform_square(2)
    prob = dirichlet_square()
    from fehc.spaces import project_pi

    wrong = project_pi(prob.f, DiscontinuousSpace(mesh, 1))
    with pytest.raises(ValueError):
        solve_conforming(prob, mesh, 1, "pi_h_f", f_proj=wrong)
