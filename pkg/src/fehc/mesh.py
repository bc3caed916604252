"""Conforming triangulations of the unit square and the L-shaped domain.

Meshes are stored as plain numpy arrays and treated as immutable once built.
Edges are numbered after sorting their (ascending) vertex pairs, so the edge
numbering depends only on the vertex numbering.  Local edge ``i`` of a
triangle is the edge opposite local vertex ``i``.

The global normal of an edge points out of the adjacent triangle with the
lower index; on the boundary it is the outward normal.  ``tri_edge_sign``
is +1 where a triangle's outward normal agrees with the global one.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

J11 = 3.8317059702075123  # first positive zero of the Bessel function J1

DIRICHLET = "D"
NEUMANN = "N"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class ElementGeometry:
    area: np.ndarray
    h_K: np.ndarray
    C0_K: np.ndarray


@dataclass(frozen=True)
class MeshSize:
    h_max: float
    h_leg: float
    per_element: ElementGeometry


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh with derived edge connectivity and boundary markers.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_marker : (ne,) array of "D"/"N" for boundary edges, "" for interior
        edges.  Built by :func:`make_mesh`; do not construct directly.
    domain : str
        ``"square"``, ``"lshape"`` or ``"custom"``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_sign: np.ndarray
    edge_tris: np.ndarray
    boundary_marker: np.ndarray
    domain: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @property
    def ne(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @cached_property
    def dirichlet_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_marker == DIRICHLET)

    @cached_property
    def neumann_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_marker == NEUMANN)

    @property
    def has_dirichlet(self) -> bool:
        return len(self.dirichlet_edges) > 0

    @cached_property
    def dirichlet_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.dirichlet_edges].ravel())

    # ----- element geometry -------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) with columns v1 - v0 and v2 - v0."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def areas(self) -> np.ndarray:
        J = self.jacobians
        return 0.5 * (J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])

    @cached_property
    def bary_grads(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the barycentric coordinates."""
        p = self.vertices[self.triangles]
        g = np.empty((self.nt, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            # gradient of lambda_i is the inward normal of edge (a, b) over its height
            g[:, i, 0] = -(b[:, 1] - a[:, 1])
            g[:, i, 1] = b[:, 0] - a[:, 0]
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """(ne, 2) unit global normals (outward from the lower-index triangle)."""
        owner = self.edge_tris[:, 0]
        loc = np.argmax(self.tri_edges[owner] == np.arange(self.ne)[:, None], axis=1)
        tri = self.triangles[owner]
        a = self.vertices[tri[np.arange(self.ne), (loc + 1) % 3]]
        b = self.vertices[tri[np.arange(self.ne), (loc + 2) % 3]]
        t = b - a
        # CCW triangle: outward normal of edge a->b is the tangent rotated clockwise
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    @cached_property
    def h_K(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges].max(axis=1)

    def to_physical(self, elements: np.ndarray, bary: np.ndarray) -> np.ndarray:
        p = self.vertices[self.triangles[elements]]
        return np.einsum("mi,mik->mk", bary, p)

    def to_bary(self, elements: np.ndarray, xy: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of physical points ``xy`` in ``elements``."""
        p0 = self.vertices[self.triangles[elements, 0]]
        g = self.bary_grads[elements]
        d = xy - p0
        l1 = np.einsum("mk,mk->m", g[:, 1], d)
        l2 = np.einsum("mk,mk->m", g[:, 2], d)
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def total_area(self) -> float:
        return float(math.fsum(self.areas))

    def bounding_box(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    def check(self) -> None:
        """Raise :class:`MeshError` if any structural invariant fails."""
        if np.any(self.areas <= 0):
            raise MeshError("triangle with non-positive signed area")
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.ne)
        if np.any((counts < 1) | (counts > 2)):
            raise MeshError("edge shared by more than two triangles")
        bnd = counts == 1
        marked = self.boundary_marker != ""
        if np.any(bnd != marked):
            raise MeshError("boundary markers do not match boundary edges")
        if not set(np.unique(self.boundary_marker[bnd])) <= {DIRICHLET, NEUMANN}:
            raise MeshError("unknown boundary marker")
        _check_no_hanging(self)


def _check_no_hanging(mesh: TriMesh) -> None:
    from scipy.spatial import cKDTree

    v = mesh.vertices
    a = v[mesh.edges[:, 0]]
    t = v[mesh.edges[:, 1]] - a
    L = mesh.edge_lengths
    tree = cKDTree(v)
    hits = tree.query_ball_point(a + 0.5 * t, 0.5 * L * (1.0 - 1e-9))
    for e, cand in enumerate(hits):
        if not cand:
            continue
        d = v[cand] - a[e]
        cross = d[:, 0] * t[e, 1] - d[:, 1] * t[e, 0]
        if np.any(np.abs(cross) <= 1e-10 * L[e] ** 2):
            raise MeshError(f"hanging vertex on edge {e}")


def make_mesh(vertices, triangles, marker="D", domain: str = "custom", meta: dict | None = None) -> TriMesh:
    """Build a :class:`TriMesh` from vertices and CCW triangles.

    ``marker`` is either a single marker applied to every boundary edge, a
    callable ``marker(midpoints) -> array of "D"/"N"``, or a dict mapping
    sorted vertex pairs to markers.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    nt = len(triangles)
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    all_e = triangles[:, loc]  # (nt, 3, 2)
    all_e = np.sort(all_e, axis=2).reshape(-1, 2)
    edges, inv = np.unique(all_e, axis=0, return_inverse=True)
    inv = inv.ravel()
    tri_edges = inv.reshape(nt, 3)
    ne = len(edges)

    order = np.argsort(inv, kind="stable")
    tri_of = order // 3
    counts = np.bincount(inv, minlength=ne)
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two triangles")
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_tris = -np.ones((ne, 2), dtype=np.int64)
    edge_tris[:, 0] = tri_of[start]
    two = counts == 2
    edge_tris[two, 1] = tri_of[start[two] + 1]
    # lower triangle index first (stable sort already guarantees it)
    sign = np.where(edge_tris[tri_edges, 0] == np.arange(nt)[:, None], 1, -1).astype(np.int8)

    bmask = counts == 1
    bmarker = np.full(ne, "", dtype="<U1")
    if isinstance(marker, str):
        bmarker[bmask] = marker
    elif callable(marker):
        mid = 0.5 * (vertices[edges[bmask, 0]] + vertices[edges[bmask, 1]])
        bmarker[bmask] = np.asarray(marker(mid), dtype="<U1")
    else:
        for e in np.flatnonzero(bmask):
            bmarker[e] = marker[(int(edges[e, 0]), int(edges[e, 1]))]
    mesh = TriMesh(vertices, triangles, edges, tri_edges, sign, edge_tris, bmarker, domain, dict(meta or {}))
    if np.any(mesh.areas <= 0):
        raise MeshError("triangles must be counter-clockwise with positive area")
    for a in (vertices, triangles, edges, tri_edges, sign, edge_tris, bmarker):
        a.setflags(write=False)
    return mesh


def _grid_triangles(nx: int, ny: int, keep=None) -> np.ndarray:
    """Friedrichs-Keller split: every cell cut by its lower-left/upper-right diagonal."""
    tris = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(i, j):
                continue
            v00 = i + j * (nx + 1)
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return np.array(tris, dtype=np.int64)


def build_uniform_square(n: int, bc: str = "dirichlet") -> TriMesh:
    """Uniform right-triangle mesh of (0,1)^2 with ``2 n^2`` elements and leg 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    marker = {"dirichlet": DIRICHLET, "neumann": NEUMANN, "D": DIRICHLET, "N": NEUMANN}[bc]
    x = np.arange(n + 1) / n
    X, Y = np.meshgrid(x, x)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return make_mesh(verts, _grid_triangles(n, n), marker, "square", {"h_leg": 1.0 / n, "n": n})


def build_uniform_lshape(n: int) -> TriMesh:
    """Uniform mesh of (-0.5,0.5)^2 minus [-0.5,0]^2 with cell size 1/n.

    ``n`` must be even so that the re-entrant corner is a grid vertex.
    """
    if n < 2 or n % 2:
        raise ValueError("L-shaped mesh needs an even n >= 2")
    half = n // 2
    x = np.arange(n + 1) / n - 0.5
    X, Y = np.meshgrid(x, x)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    tris = _grid_triangles(n, n, keep=lambda i, j: not (i < half and j < half))
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return make_mesh(verts[used], remap[tris], DIRICHLET, "lshape", {"h_leg": 1.0 / n, "n": n})


def mesh_size(mesh: TriMesh) -> MeshSize:
    """Longest-edge mesh size, leg length (right-triangle meshes) and element constants."""
    hK = mesh.h_K
    geo = ElementGeometry(mesh.areas.copy(), hK.copy(), hK / J11)
    h_max = float(hK.max())
    return MeshSize(h_max, h_max / math.sqrt(2.0), geo)


# ---------------------------------------------------------------------------
# local red-green refinement
# ---------------------------------------------------------------------------


def refine_locally(mesh: TriMesh, region, levels: int) -> TriMesh:
    """Red-refine the elements contained in ``region`` ``levels`` times.

    ``region`` is ``(x0, x1, y0, y1)``.  Neighbouring elements are red-refined
    as needed to keep every edge at most one level apart, and the remaining
    single hanging nodes are removed by green bisection at the end.  Element
    shapes therefore stay within the similarity classes of the input mesh plus
    their green halves.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return mesh
    region = tuple(float(r) for r in region)
    coords = [tuple(p) for p in mesh.vertices.tolist()]
    index = {c: i for i, c in enumerate(coords)}
    mid: dict[tuple[int, int], int] = {}
    bmark: dict[tuple[int, int], str] = {}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    for e in mesh.boundary_edges:
        a, b = (int(v) for v in mesh.edges[e])
        bmark[(a, b)] = str(mesh.boundary_marker[e])

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        m = mid.get(key)
        if m is not None:
            return m
        pa, pb = coords[a], coords[b]
        c = (0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]))
        m = index.get(c)
        if m is None:
            m = len(coords)
            coords.append(c)
            index[c] = m
        mid[key] = m
        parent[(min(key[0], m), max(key[0], m))] = key
        parent[(min(key[1], m), max(key[1], m))] = key
        if key in bmark:
            mk = bmark[key]
            for k2 in ((min(key[0], m), max(key[0], m)), (min(key[1], m), max(key[1], m))):
                bmark[k2] = mk
        return m

    def red(t):
        a, b, c = t
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        return [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]

    def split_depth(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        m = mid.get(key)
        if m is None:
            return 0
        sub = 0
        for k2 in ((a, m), (m, b)):
            k2 = (k2[0], k2[1]) if k2[0] < k2[1] else (k2[1], k2[0])
            if k2 in mid:
                sub = 1
        return 1 + sub

    def ekey(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def inside(t) -> bool:
        x0, x1, y0, y1 = region
        tol = 1e-12
        return all(x0 - tol <= coords[v][0] <= x1 + tol and y0 - tol <= coords[v][1] <= y1 + tol for v in t)

    def needs_red(t) -> bool:
        depths = [split_depth(t[i], t[(i + 1) % 3]) for i in range(3)]
        return max(depths) > 1 or sum(d > 0 for d in depths) > 1

    leaves = {tuple(int(v) for v in t) for t in mesh.triangles}
    by_edge: dict[tuple[int, int], set] = {}

    def add(t):
        leaves.add(t)
        for i in range(3):
            by_edge.setdefault(ekey(t[i], t[(i + 1) % 3]), set()).add(t)

    def remove(t):
        leaves.discard(t)
        for i in range(3):
            by_edge[ekey(t[i], t[(i + 1) % 3])].discard(t)

    for t in list(leaves):
        add(t)
    for _ in range(levels):
        for t in [t for t in leaves if inside(t)]:
            remove(t)
            for c in red(t):
                add(c)
        # closure: at most one split edge per leaf, never two levels deep.
        # Refining a leaf splits its own edges, which changes the depth seen
        # by leaves holding those edges or their parents; only those and the
        # children are revisited.
        work = list(leaves)
        while work:
            t = work.pop()
            if t not in leaves or not needs_red(t):
                continue
            remove(t)
            for c in red(t):
                add(c)
                work.append(c)
            for i in range(3):
                k = ekey(t[i], t[(i + 1) % 3])
                work.extend(by_edge.get(k, ()))
                if k in parent:
                    work.extend(by_edge.get(parent[k], ()))
    # deterministic element order
    leaves = sorted(leaves)

    final = []
    for t in leaves:
        for i in range(3):
            a, b = t[i], t[(i + 1) % 3]
            key = (a, b) if a < b else (b, a)
            if key in mid:
                m = mid[key]
                c = t[(i + 2) % 3]
                final.append((a, m, c))
                final.append((m, b, c))
                break
        else:
            final.append(t)

    verts = np.array(coords)
    tris = np.array(final, dtype=np.int64)
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    back = {}
    for (a, b), mk in bmark.items():
        if remap[a] >= 0 and remap[b] >= 0:
            ra, rb = int(remap[a]), int(remap[b])
            back[(min(ra, rb), max(ra, rb))] = mk
    meta = dict(mesh.meta)
    meta.update(refined_region=region, levels=levels + int(mesh.meta.get("levels", 0)))
    meta.pop("h_leg", None)
    out = make_mesh(verts[used], remap[tris], back, mesh.domain, meta)
    out.check()
    return out


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def write_mesh(mesh: TriMesh, path_or_buf) -> None:
    """Write ``nv nt nbe`` / vertices / triangles / boundary edges with markers."""
    b = mesh.boundary_edges
    lines = [f"{mesh.nv} {mesh.nt} {len(b)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b_} {c}" for a, b_, c in mesh.triangles.tolist()]
    lines += [f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {mesh.boundary_marker[e]}" for e in b]
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_buf, (str, Path)):
        Path(path_or_buf).write_text(text, newline="\n")
    else:
        path_or_buf.write(text)


def read_mesh(path_or_buf, domain: str = "custom") -> TriMesh:
    if isinstance(path_or_buf, (str, Path)):
        text = Path(path_or_buf).read_text()
    else:
        text = path_or_buf.read()
    tok = io.StringIO(text).read().split()
    try:
        nv, nt, nbe = int(tok[0]), int(tok[1]), int(tok[2])
        pos = 3
        verts = np.array([float(t) for t in tok[pos:pos + 2 * nv]]).reshape(nv, 2)
        pos += 2 * nv
        tris = np.array([int(t) for t in tok[pos:pos + 3 * nt]], dtype=np.int64).reshape(nt, 3)
        pos += 3 * nt
        marks = {}
        for k in range(nbe):
            a, b, m = tok[pos + 3 * k:pos + 3 * k + 3]
            a, b = int(a), int(b)
            marks[(min(a, b), max(a, b))] = m
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file: {exc}") from None
    mesh = make_mesh(verts, tris, marks, domain)
    mesh.check()
    return mesh
