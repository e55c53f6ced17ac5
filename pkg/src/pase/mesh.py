"""
Two-dimensional triangular meshes with nested refinement.

Triangles are stored counter-clockwise.  ``refinement_edge[t]`` is the local
index ``k`` of the refinement edge of triangle ``t``, where local edge ``k``
is the one opposite local vertex ``k``.  Every refined mesh keeps the
vertices of its parent first and in the same order; ``vertex_parents`` holds
``(v, v)`` for such inherited vertices and the endpoints ``(i, j)`` of the
bisected parent edge for new midpoint vertices.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MeshError

__all__ = [
    "MeshLevel",
    "build_unit_square_mesh",
    "build_lshape_mesh",
    "refine_uniform",
    "refine_bisection",
    "mesh_edges",
    "signed_areas",
    "min_angle",
    "is_conforming",
    "write_mesh_text",
]


@dataclass(eq=False)
class MeshLevel:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    parent_of: np.ndarray
    refinement_edge: np.ndarray
    level: int = 0
    vertex_parents: Optional[np.ndarray] = None
    parent: Optional["MeshLevel"] = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_interior(self):
        return int(np.count_nonzero(~self.boundary))

    def area(self):
        return float(signed_areas(self).sum())


def signed_areas(mesh):
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def mesh_edges(triangles):
    """Unique edges of a triangulation.

    Returns
    -------
    edges : ndarray, shape (ne, 2)
        Sorted vertex pairs.
    tri_edges : ndarray, shape (nt, 3)
        ``tri_edges[t, k]`` is the edge opposite local vertex ``k``.
    counts : ndarray, shape (ne,)
        Number of triangles sharing each edge.
    """
    t = np.asarray(triangles)
    local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    return edges, inv.reshape(-1, 3), counts


def _boundary_from_edges(nv, edges, counts):
    flags = np.zeros(nv, dtype=bool)
    flags[edges[counts == 1].ravel()] = True
    return flags


def _longest_edge(vertices, triangles):
    p = vertices[triangles]
    lengths = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        ],
        axis=1,
    )
    return np.argmax(lengths, axis=1)


def _from_cells(vertices, cells):
    # cells: (nc, 4) vertex ids (ll, lr, ul, ur); each cell split along ll-ur
    ll, lr, ul, ur = cells.T
    tris = np.empty((2 * len(cells), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([ur, ll, lr])
    tris[1::2] = np.column_stack([ll, ur, ul])
    used = np.unique(tris)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = vertices[used]
    tris = remap[tris]
    edges, _, counts = mesh_edges(tris)
    nt = len(tris)
    return MeshLevel(
        vertices=vertices,
        triangles=tris,
        boundary=_boundary_from_edges(len(vertices), edges, counts),
        parent_of=-np.ones(nt, dtype=np.int64),
        refinement_edge=np.full(nt, 2, dtype=np.int64),
        level=0,
    )


def _grid(x0, y0, nx, ny, h):
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    verts = np.column_stack([x0 + h * i.ravel(), y0 + h * j.ravel()])
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    ll = cj * (nx + 1) + ci
    cells = np.column_stack([ll, ll + 1, ll + nx + 1, ll + nx + 2])
    centers = np.column_stack([x0 + h * (ci + 0.5), y0 + h * (cj + 0.5)])
    return verts, cells, centers


def build_unit_square_mesh(n):
    """Structured mesh of (0,1)^2 with ``n`` cells per side.

    Each cell is split along its lower-left to upper-right diagonal, giving
    ``(n+1)^2`` vertices and ``2 n^2`` triangles.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    verts, cells, _ = _grid(0.0, 0.0, n, n, 1.0 / n)
    return _from_cells(verts, cells)


def build_lshape_mesh(n):
    """Structured mesh of (-1,1)^2 minus [0,1]^2 with ``n`` cells per unit length."""
    if n < 1:
        raise ValueError("n must be >= 1")
    verts, cells, centers = _grid(-1.0, -1.0, 2 * n, 2 * n, 1.0 / n)
    keep = ~((centers[:, 0] > 0) & (centers[:, 1] > 0))
    return _from_cells(verts, cells[keep])


def refine_uniform(mesh):
    """Red refinement: split every triangle into four via edge midpoints."""
    edges, tri_edges, counts = mesh_edges(mesh.triangles)
    nv = mesh.n_vertices
    mid = nv + np.arange(len(edges))
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    a, b, c = mesh.triangles.T
    ma, mb, mc = mid[tri_edges[:, 0]], mid[tri_edges[:, 1]], mid[tri_edges[:, 2]]
    children = np.stack(
        [
            np.column_stack([a, mc, mb]),
            np.column_stack([mc, b, ma]),
            np.column_stack([mb, ma, c]),
            np.column_stack([ma, mb, mc]),
        ],
        axis=1,
    ).reshape(-1, 3)
    nt = mesh.n_triangles
    boundary = np.concatenate([mesh.boundary, counts == 1])
    own = np.arange(nv)
    return MeshLevel(
        vertices=vertices,
        triangles=children,
        boundary=boundary,
        parent_of=np.repeat(np.arange(nt), 4),
        refinement_edge=np.repeat(mesh.refinement_edge, 4),
        level=mesh.level + 1,
        vertex_parents=np.vstack([np.column_stack([own, own]), edges]),
        parent=mesh,
    )


def _rotate_to_refinement_edge(triangles, refinement_edge):
    # reorder each triangle so that its refinement edge is opposite local 2
    t = np.asarray(triangles)
    shift = (np.asarray(refinement_edge) + 1) % 3
    idx = (np.arange(3)[None, :] + shift[:, None]) % 3
    return np.take_along_axis(t, idx, axis=1)


def refine_bisection(mesh, marked):
    """Newest-vertex bisection of the marked triangles with conforming closure.

    Each marked triangle is bisected at least once; further bisections are
    added until no hanging node remains.
    """
    marked = np.asarray(sorted(set(int(t) for t in marked)), dtype=np.int64)
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.n_triangles):
        raise MeshError("marked triangle index out of range")
    tris = _rotate_to_refinement_edge(mesh.triangles, mesh.refinement_edge)
    edges, tri_edges, counts = mesh_edges(tris)
    ref = tri_edges[:, 2]

    cut = np.zeros(len(edges), dtype=bool)
    cut[ref[marked]] = True
    while True:
        touched = cut[tri_edges].any(axis=1)
        grow = touched & ~cut[ref]
        if not grow.any():
            break
        cut[ref[grow]] = True

    nv = mesh.n_vertices
    mid = -np.ones(len(edges), dtype=np.int64)
    mid[cut] = nv + np.arange(int(cut.sum()))
    new_edges = edges[cut]
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[new_edges[:, 0]] + mesh.vertices[new_edges[:, 1]])])
    boundary = np.concatenate([mesh.boundary, counts[cut] == 1])

    a, b, c = tris.T
    m = mid[ref]
    split = m >= 0
    e_ca, e_bc = tri_edges[:, 1], tri_edges[:, 0]
    out_t, out_p = [tris[~split]], [np.flatnonzero(~split)]

    s = np.flatnonzero(split)
    # first bisection: (c, a, m) and (b, c, m); then optionally their own bases
    for first, base in (
        (np.column_stack([c[s], a[s], m[s]]), e_ca[s]),
        (np.column_stack([b[s], c[s], m[s]]), e_bc[s]),
    ):
        p = mid[base]
        again = p >= 0
        out_t.append(first[~again])
        out_p.append(s[~again])
        x, y, z = first[again].T
        pa = p[again]
        out_t.append(np.column_stack([z, x, pa]))
        out_t.append(np.column_stack([y, z, pa]))
        out_p.append(s[again])
        out_p.append(s[again])

    new_tris = np.vstack(out_t)
    parents = np.concatenate(out_p)
    order = np.argsort(parents, kind="stable")
    own = np.arange(nv)
    return MeshLevel(
        vertices=vertices,
        triangles=new_tris[order],
        boundary=boundary,
        parent_of=parents[order],
        refinement_edge=np.full(len(new_tris), 2, dtype=np.int64),
        level=mesh.level + 1,
        vertex_parents=np.vstack([np.column_stack([own, own]), new_edges]),
        parent=mesh,
    )


def min_angle(mesh):
    """Smallest interior angle (radians) over all triangles."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


def is_conforming(mesh):
    """Audit edge conformity of a mesh of a simply connected domain.

    Every edge must be shared by at most two triangles, every vertex must be
    used, all areas positive, and the Euler characteristic must equal one;
    a hanging node lowers it.
    """
    edges, _, counts = mesh_edges(mesh.triangles)
    if counts.max(initial=0) > 2:
        return False
    if np.any(signed_areas(mesh) <= 0):
        return False
    if len(np.unique(mesh.triangles)) != mesh.n_vertices:
        return False
    return mesh.n_vertices - len(edges) + mesh.n_triangles == 1


def write_mesh_text(path, mesh):
    """Plain-text export: ``v x y`` lines, ``t i j k`` lines, one ``f`` flag line."""
    with open(path, "w") as fh:
        for x, y in mesh.vertices:
            fh.write("v %.17g %.17g\n" % (x, y))
        for i, j, k in mesh.triangles:
            fh.write("t %d %d %d\n" % (i, j, k))
        fh.write("f " + " ".join("1" if f else "0" for f in mesh.boundary) + "\n")
