"""
P1 Lagrange finite elements on :class:`~pase.mesh.MeshLevel` meshes.

Homogeneous Dirichlet conditions are imposed by eliminating boundary
vertices, so every assembled pencil acts on interior (free) vertices only.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshError, NestingError
from .linalg import as_csr
from .mesh import MeshLevel, signed_areas

__all__ = ["FeSpace", "assemble", "build_prolongation", "interpolate", "gradients"]

# edge-midpoint rule: barycentric coordinates of the three quadrature points
_QUAD_BARY = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])


@dataclass(eq=False)
class FeSpace:
    mesh: MeshLevel

    def __post_init__(self):
        self.free_dofs = np.flatnonzero(~self.mesh.boundary)
        self.dof_of_vertex = -np.ones(self.mesh.n_vertices, dtype=np.int64)
        self.dof_of_vertex[self.free_dofs] = np.arange(len(self.free_dofs))

    @property
    def ndofs(self):
        return len(self.free_dofs)

    def extend(self, U):
        """Nodal values on all vertices (zero on the boundary) from free-DOF values."""
        U = np.asarray(U, dtype=np.float64)
        full = np.zeros((self.mesh.n_vertices,) + U.shape[1:])
        full[self.free_dofs] = U
        return full


def gradients(mesh):
    """Constant gradients of the three barycentric functions, shape (nt, 3, 2), and areas."""
    area = signed_areas(mesh)
    if np.any(area <= 0):
        t = int(np.flatnonzero(area <= 0)[0])
        raise MeshError("triangle %d is degenerate or inverted (area %.3e)" % (t, area[t]))
    p = mesh.vertices[mesh.triangles]
    g = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        g[:, k, 0] = p[:, i, 1] - p[:, j, 1]
        g[:, k, 1] = p[:, j, 0] - p[:, i, 0]
    g /= (2.0 * area)[:, None, None]
    return g, area


def _quad_points(mesh):
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qk,tkd->tqd", _QUAD_BARY, p)


def _diffusion_weights(coef, mesh, area):
    # area-weighted mean of the diffusion tensor over each triangle, (nt, 2, 2)
    nt = mesh.n_triangles
    if coef is None:
        return np.broadcast_to(np.eye(2), (nt, 2, 2)) * area[:, None, None]
    if np.isscalar(coef):
        return np.broadcast_to(float(coef) * np.eye(2), (nt, 2, 2)) * area[:, None, None]
    xq = _quad_points(mesh)
    vals = np.asarray(coef(xq[..., 0], xq[..., 1]), dtype=np.float64)
    if vals.shape != (nt, 3, 2, 2):
        raise ValueError("diffusion coefficient must return shape (..., 2, 2)")
    return vals.mean(axis=1) * area[:, None, None]


def _local_mass(coef, mesh, area):
    nt = mesh.n_triangles
    exact = (np.ones((3, 3)) + np.eye(3)) / 12.0
    if coef is None:
        return np.broadcast_to(exact, (nt, 3, 3)) * area[:, None, None]
    if np.isscalar(coef):
        return np.broadcast_to(float(coef) * exact, (nt, 3, 3)) * area[:, None, None]
    xq = _quad_points(mesh)
    vals = np.asarray(coef(xq[..., 0], xq[..., 1]), dtype=np.float64).reshape(nt, 3)
    lam = _QUAD_BARY
    return np.einsum("tq,qi,qj->tij", vals, lam, lam) * (area / 3.0)[:, None, None]


def _scatter(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return as_csr(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def assemble(space, diffusion=None, potential=None, eliminate=True):
    """Assemble the stiffness/mass pencil of ``-div(A grad u) + phi u = lam u``.

    Parameters
    ----------
    space : FeSpace
    diffusion : None, float or callable
        ``None`` is the identity tensor; a callable maps ``(x, y)`` arrays to
        ``(..., 2, 2)`` symmetric positive definite tensors.
    potential : None, float or callable
        Zeroth-order coefficient ``phi``; a callable maps ``(x, y)`` to values.
    eliminate : bool
        Restrict to free DOFs (default); otherwise return full-vertex matrices.

    Returns
    -------
    A_h, B_h : csr_matrix
        Variable coefficients use the three-point edge-midpoint rule;
        constant ones use closed-form element matrices.
    """
    mesh = space.mesh
    g, area = gradients(mesh)
    D = _diffusion_weights(diffusion, mesh, area)
    K = np.einsum("tid,tde,tje->tij", g, D, g)
    M = _local_mass(None, mesh, area)
    A = _scatter(mesh, K)
    if potential is not None and not (np.isscalar(potential) and potential == 0):
        A = A + _scatter(mesh, _local_mass(potential, mesh, area))
    B = _scatter(mesh, M)
    A = as_csr(0.5 * (A + A.T))
    B = as_csr(0.5 * (B + B.T))
    if not eliminate:
        return A, B
    f = space.free_dofs
    return as_csr(A[f][:, f]), as_csr(B[f][:, f])


def _vertex_interpolation(mesh):
    vp = mesh.vertex_parents
    n = len(vp)
    rows = np.repeat(np.arange(n), 2)
    cols = vp.ravel()
    vals = np.full(2 * n, 0.5)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, mesh.parent.n_vertices)).tocsr()


def build_prolongation(coarse, fine):
    """Nodal interpolation from a coarse space onto a nested fine space.

    The fine mesh must descend from the coarse mesh through ``parent``
    links (uniform or bisection refinements).  Its transpose is the
    restriction operator.

    Raises
    ------
    NestingError
        If `fine` does not descend from `coarse`.
    """
    chain = []
    m = fine.mesh
    while m is not coarse.mesh:
        if m.parent is None:
            raise NestingError("fine mesh does not descend from the coarse mesh")
        chain.append(_vertex_interpolation(m))
        m = m.parent
    P = sp.identity(coarse.mesh.n_vertices, format="csr")
    for step in reversed(chain):
        P = step @ P
    P = as_csr(P)
    return as_csr(P[fine.free_dofs][:, coarse.free_dofs])


def interpolate(space, func):
    """Free-DOF nodal values of ``func(x, y)``."""
    xy = space.mesh.vertices[space.free_dofs]
    return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=np.float64)
