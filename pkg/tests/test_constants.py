import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehc.constants import (
    KappaOperator,
    compute_C0,
    compute_Ch,
    compute_constants,
    compute_kappa,
    difference_fields,
    kappa_dense,
    kappa_lanczos,
    kappa_power,
)
from fehc.mesh import J11, build_uniform_lshape, build_uniform_square, make_mesh


def test_C0_on_a_single_reference_triangle():
    mesh = make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    hK = float(mesh.h_K[0])
    assert compute_C0(mesh, hK) == pytest.approx(1 / J11, rel=1e-15)
    assert 1 / J11 <= 0.2610


@pytest.mark.parametrize("n", [1, 4, 16, 64])
def test_C0_on_uniform_square_is_scale_invariant(n):
    assert compute_C0(build_uniform_square(n)) == pytest.approx(math.sqrt(2) / J11, rel=1e-14)


def test_Ch_examples():
    assert compute_Ch(0.030, math.sqrt(2) / J11, 1 / 16) == pytest.approx(0.0378, abs=5e-5)
    assert compute_Ch(0.0, 0.0, 1 / 64, mode="lagrange_0493") == pytest.approx(0.493 / 64)
    with pytest.raises(ValueError):
        compute_Ch(0.01, 0.3, 0.1, mode="lagrange_0493", domain="lshape")
    with pytest.raises(ValueError):
        compute_Ch(-1.0, 0.3, 0.1)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1))
def test_Ch_dominates_both_terms(kappa, C0, h):
    Ch = compute_Ch(kappa, C0, h)
    assert Ch >= kappa and Ch >= C0 * h
    assert Ch <= kappa + C0 * h + 1e-15


@pytest.mark.parametrize("bc", ["D", "N"])
@pytest.mark.parametrize("n", [2, 4, 8])
def test_dense_power_and_lanczos_agree(n, bc):
    mesh = build_uniform_square(n, bc)
    kd = kappa_dense(mesh)
    kp, _ = kappa_power(mesh, tol=1e-12)
    kl, _ = kappa_lanczos(mesh)
    assert kp == pytest.approx(kd, rel=1e-6)
    assert kl == pytest.approx(kd, rel=1e-6)


def test_dense_route_matches_operator_identity(rng):
    # (f, mu) - (f, v) computed by the operator equals ||(R - T) f||^2 from the fields
    mesh = build_uniform_lshape(4)
    op = KappaOperator(mesh)
    c = rng.standard_normal(mesh.nt)
    vals, w = difference_fields(mesh, c[:, None])
    direct = float(np.dot(w, np.einsum("mk,mk->m", vals[:, :, 0], vals[:, :, 0])))
    via_op = float((mesh.areas * c) @ op.apply(c))
    assert via_op == pytest.approx(direct, rel=1e-10)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["D", "N"]))
def test_rayleigh_quotients_never_exceed_kappa(seed, bc):
    mesh = build_uniform_square(4, bc)
    kappa = kappa_dense(mesh)
    op = KappaOperator(mesh)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        c = rng.standard_normal(mesh.nt)
        assert op.rayleigh(c) <= kappa**2 + 1e-8


def test_auto_selection_and_report():
    mesh = build_uniform_square(8)
    k, method, _ = compute_kappa(mesh)
    assert method == "dense_eig"
    rep = compute_constants(mesh)
    assert rep.kappa_h == pytest.approx(k)
    assert rep.C_h >= max(rep.kappa_h, rep.C0h)
    assert rep.h_used == pytest.approx(1 / 8)
    assert rep.lagrange_alternative == pytest.approx(0.493 / 8)
    assert compute_constants(build_uniform_lshape(4)).lagrange_alternative is None


def test_unknown_method():
    with pytest.raises(ValueError):
        compute_kappa(build_uniform_square(2), "magic")
