"""Model problems: nested finite element hierarchies and the coefficient set."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError
from .fem import FeSpace, assemble, build_prolongation
from .linalg import as_csr
from .mesh import build_lshape_mesh, build_unit_square_mesh, refine_uniform

__all__ = [
    "Hierarchy",
    "square_hierarchy",
    "lshape_hierarchy",
    "mesh_hierarchy",
    "variable_diffusion",
    "variable_potential",
    "square_analytic",
]


@dataclass(eq=False)
class Hierarchy:
    """Coarse pencil, fine pencil and the prolongation between them."""

    A_H: sp.csr_matrix
    B_H: sp.csr_matrix
    A_h: sp.csr_matrix
    B_h: sp.csr_matrix
    prolong: sp.csr_matrix
    coarse_space: Optional[FeSpace] = None
    fine_space: Optional[FeSpace] = None

    def __post_init__(self):
        self.A_H, self.B_H = as_csr(self.A_H), as_csr(self.B_H)
        self.A_h, self.B_h = as_csr(self.A_h), as_csr(self.B_h)
        self.prolong = as_csr(self.prolong)
        n_h, n_H = self.prolong.shape
        if self.A_H.shape != (n_H, n_H) or self.B_H.shape != (n_H, n_H):
            raise DimensionError("coarse pencil %s does not match prolongation %s" % (self.A_H.shape, self.prolong.shape))
        if self.A_h.shape != (n_h, n_h) or self.B_h.shape != (n_h, n_h):
            raise DimensionError("fine pencil %s does not match prolongation %s" % (self.A_h.shape, self.prolong.shape))

    @property
    def restrict(self):
        return as_csr(self.prolong.T)

    @property
    def n_coarse(self):
        return self.A_H.shape[0]

    @property
    def n_fine(self):
        return self.A_h.shape[0]


def variable_diffusion(x, y):
    """``I + d d^T`` with ``d = (x - 1/2, y - 1/2)``."""
    d = np.stack([np.asarray(x) - 0.5, np.asarray(y) - 0.5], axis=-1)
    return np.eye(2) + d[..., :, None] * d[..., None, :]


def variable_potential(x, y):
    return np.exp((np.asarray(x) - 0.5) * (np.asarray(y) - 0.5))


def mesh_hierarchy(coarse_mesh, fine_mesh, diffusion=None, potential=None):
    """Assemble both pencils on nested meshes and link them by prolongation."""
    Sc, Sf = FeSpace(coarse_mesh), FeSpace(fine_mesh)
    A_H, B_H = assemble(Sc, diffusion, potential)
    A_h, B_h = assemble(Sf, diffusion, potential)
    return Hierarchy(A_H, B_H, A_h, B_h, build_prolongation(Sc, Sf), Sc, Sf)


def _levels(n_coarse, n_fine):
    ratio = n_fine // n_coarse
    if n_coarse < 1 or ratio < 1 or ratio * n_coarse != n_fine or ratio & (ratio - 1):
        raise ValueError("fine n must be the coarse n times a power of two (got %d, %d)" % (n_coarse, n_fine))
    return ratio.bit_length() - 1


def square_hierarchy(n_coarse, n_fine, diffusion=None, potential=None):
    """Unit-square hierarchy; the fine mesh comes from uniform refinements of the coarse one."""
    coarse = build_unit_square_mesh(n_coarse)
    fine = coarse
    for _ in range(_levels(n_coarse, n_fine)):
        fine = refine_uniform(fine)
    return mesh_hierarchy(coarse, fine, diffusion, potential)


def lshape_hierarchy(n_coarse, n_fine):
    coarse = build_lshape_mesh(n_coarse)
    fine = coarse
    for _ in range(_levels(n_coarse, n_fine)):
        fine = refine_uniform(fine)
    return mesh_hierarchy(coarse, fine)


def square_analytic(count):
    """Smallest `count` Dirichlet Laplacian eigenvalues of the unit square, ``(m^2 + n^2) pi^2``."""
    side = int(np.ceil(np.sqrt(count))) + 2
    m, n = np.meshgrid(np.arange(1, side + 1), np.arange(1, side + 1))
    vals = np.sort((m ** 2 + n ** 2).ravel())
    return vals[:count] * np.pi ** 2
