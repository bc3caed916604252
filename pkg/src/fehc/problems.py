"""Model problems with closed-form solutions used by the experiments."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, build_uniform_lshape, build_uniform_square
from .solve import ProblemSpec

PI = np.pi


def dirichlet_square() -> ProblemSpec:
    """``u = sin(pi x) sin(pi y)`` on the unit square, homogeneous Dirichlet data."""

    def u(x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def grad_u(x, y):
        return (PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y))

    def f(x, y):
        return 2 * PI**2 * u(x, y)

    return ProblemSpec("dirichlet_square", f=f, u=u, grad_u=grad_u, meta={"domain": "square", "bc": "D"})


def neumann_square() -> ProblemSpec:
    """``u = cos(pi x) cos(pi y)``, homogeneous Neumann data, zero mean."""

    def u(x, y):
        return np.cos(PI * x) * np.cos(PI * y)

    def grad_u(x, y):
        return (-PI * np.sin(PI * x) * np.cos(PI * y), -PI * np.cos(PI * x) * np.sin(PI * y))

    def f(x, y):
        return 2 * PI**2 * u(x, y)

    return ProblemSpec("neumann_square", f=f, u=u, grad_u=grad_u, meta={"domain": "square", "bc": "N"})


def _lshape_angle(x, y):
    """Angle measured from the ray (0, -1), in [0, 3 pi / 2] on the L-shaped domain."""
    theta = np.arctan2(y, x)
    theta = np.where(theta < -PI / 2 - 1e-14, theta + 2 * PI, theta)
    return theta + PI / 2


def lshape() -> ProblemSpec:
    """Corner-singular solution on ``(-0.5, 0.5)^2`` minus the closed third quadrant.

    ``u = v w`` with the harmonic ``v = r^(2/3) sin(2 phi / 3)`` (``phi`` measured
    from the negative y axis) and ``w = cos(pi x) cos(pi y)``.  Since ``v`` is
    harmonic, ``-lap u = -2 grad v . grad w + 2 pi^2 v w``.
    """

    def parts(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        phi = _lshape_angle(x, y)
        theta = phi - PI / 2
        s, c = np.sin(2 * phi / 3), np.cos(2 * phi / 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            rm = np.where(r > 0, r ** (-1.0 / 3.0), 0.0)
        v = r ** (2.0 / 3.0) * s
        # grad v = (2/3) r^(-1/3) [sin(2phi/3) e_r + cos(2phi/3) e_theta]
        er = (np.cos(theta), np.sin(theta))
        et = (-np.sin(theta), np.cos(theta))
        vx = (2.0 / 3.0) * rm * (s * er[0] + c * et[0])
        vy = (2.0 / 3.0) * rm * (s * er[1] + c * et[1])
        w = np.cos(PI * x) * np.cos(PI * y)
        wx = -PI * np.sin(PI * x) * np.cos(PI * y)
        wy = -PI * np.cos(PI * x) * np.sin(PI * y)
        return v, vx, vy, w, wx, wy

    def u(x, y):
        v, _, _, w, _, _ = parts(x, y)
        return v * w

    def grad_u(x, y):
        v, vx, vy, w, wx, wy = parts(x, y)
        return (vx * w + v * wx, vy * w + v * wy)

    def f(x, y):
        v, vx, vy, w, wx, wy = parts(x, y)
        return -2.0 * (vx * wx + vy * wy) + 2 * PI**2 * v * w

    return ProblemSpec(
        "lshape", f=f, u=u, grad_u=grad_u, singular_point=(0.0, 0.0), meta={"domain": "lshape", "bc": "D"}
    )


PROBLEMS = {
    "dirichlet_square": dirichlet_square,
    "neumann_square": neumann_square,
    "lshape": lshape,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def build_mesh_for(problem: ProblemSpec, n: int) -> TriMesh:
    """Uniform mesh with cell size ``1/n`` on the problem's domain."""
    if problem.meta.get("domain") == "lshape":
        return build_uniform_lshape(n)
    return build_uniform_square(n, problem.meta.get("bc", "D"))
