import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehc.mesh import (
    J11,
    MeshError,
    build_uniform_lshape,
    build_uniform_square,
    make_mesh,
    mesh_size,
    read_mesh,
    refine_locally,
    write_mesh,
)


def brute_force_h_max(mesh):
    v = mesh.vertices[mesh.triangles]
    return max(np.linalg.norm(v[:, i] - v[:, j], axis=1).max() for i, j in ((0, 1), (1, 2), (2, 0)))


def test_unit_square_n1():
    mesh = build_uniform_square(1)
    assert (mesh.nv, mesh.nt, mesh.ne) == (4, 2, 5)
    assert len(mesh.boundary_edges) == 4
    assert mesh.total_area() == pytest.approx(1.0, rel=1e-14)


@given(st.integers(1, 12), st.sampled_from(["D", "N"]))
def test_uniform_square_structure(n, bc):
    mesh = build_uniform_square(n, bc)
    mesh.check()
    assert mesh.nt == 2 * n * n
    assert mesh.nv == (n + 1) ** 2
    # Euler characteristic of a disk
    assert mesh.nv - mesh.ne + mesh.nt == 1
    assert np.all(mesh.areas > 0)
    assert np.all(mesh.edges[:, 0] < mesh.edges[:, 1])
    assert len(mesh.boundary_edges) == 4 * n
    assert set(mesh.boundary_marker[mesh.boundary_edges]) == {bc}
    assert mesh.total_area() == pytest.approx(1.0, rel=1e-12)
    assert mesh.h_K.max() == pytest.approx(np.sqrt(2) / n, rel=1e-14)


@given(st.integers(1, 8))
def test_uniform_lshape_structure(half):
    n = 2 * half
    mesh = build_uniform_lshape(n)
    mesh.check()
    assert mesh.nt == 2 * n * n * 3 // 4
    assert mesh.total_area() == pytest.approx(0.75, rel=1e-12)
    # the re-entrant corner is a vertex
    assert np.any(np.all(mesh.vertices == 0.0, axis=1))
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    assert not np.any((centroids[:, 0] < 0) & (centroids[:, 1] < 0))


def test_lshape_rejects_odd_n():
    with pytest.raises(ValueError):
        build_uniform_lshape(3)


def test_edge_signs_are_opposite_on_interior_edges():
    mesh = build_uniform_square(5)
    s = np.zeros(mesh.ne)
    np.add.at(s, mesh.tri_edges.ravel(), mesh.tri_edge_sign.ravel().astype(float))
    interior = mesh.boundary_marker == ""
    assert np.all(s[interior] == 0)
    assert np.all(s[~interior] == 1)


def test_clockwise_triangle_rejected():
    with pytest.raises(MeshError):
        make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_mesh_size_reports_element_constants():
    size = mesh_size(build_uniform_square(4))
    assert size.h_max == pytest.approx(np.sqrt(2) / 4)
    assert np.allclose(size.per_element.C0_K, size.per_element.h_K / J11)


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_refine_locally_is_conforming_and_area_preserving(levels):
    base = build_uniform_square(4)
    fine = refine_locally(base, (0.25, 0.75, 0.25, 0.75), levels)
    fine.check()  # includes the hanging-node scan
    assert fine.total_area() == pytest.approx(1.0, rel=1e-12)
    centroids = fine.vertices[fine.triangles].mean(axis=1)
    inside = np.all((centroids > 0.25) & (centroids < 0.75), axis=1)
    assert fine.h_K[inside].max() == pytest.approx(np.sqrt(2) / 4 / 2**levels, rel=1e-12)
    assert fine.h_K.max() == pytest.approx(brute_force_h_max(fine), rel=1e-14)


def test_refined_lshape_corner_elements():
    coarse = build_uniform_lshape(8)
    h_G = coarse.h_K.max()
    fine = refine_locally(coarse, (-0.25, 0.25, -0.25, 0.25), 2)
    fine.check()
    assert fine.total_area() == pytest.approx(0.75, rel=1e-12)
    at_corner = np.any(np.all(np.abs(fine.vertices[fine.triangles]) < 1e-14, axis=2), axis=1)
    assert at_corner.any()
    assert np.all(fine.h_K[at_corner] <= h_G / 4 + 1e-14)


def test_refine_preserves_boundary_markers():
    base = build_uniform_square(2, "N")
    fine = refine_locally(base, (0.0, 0.5, 0.0, 0.5), 2)
    assert set(fine.boundary_marker[fine.boundary_edges]) == {"N"}


@pytest.mark.parametrize("builder", [lambda: build_uniform_square(1), lambda: build_uniform_square(3, "N"),
                                     lambda: build_uniform_lshape(4),
                                     lambda: refine_locally(build_uniform_square(2), (0, 0.5, 0, 0.5), 2)])
def test_write_read_round_trip(builder):
    mesh = builder()
    buf = io.StringIO()
    write_mesh(mesh, buf)
    text = buf.getvalue()
    again = read_mesh(io.StringIO(text), mesh.domain)
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.triangles, mesh.triangles)
    assert np.array_equal(again.boundary_marker, mesh.boundary_marker)
    buf2 = io.StringIO()
    write_mesh(again, buf2)
    assert buf2.getvalue() == text


def test_read_malformed_mesh():
    with pytest.raises(MeshError):
        read_mesh(io.StringIO("3 1 3\n0 0\n1 0\n"))
