"""
Residual a posteriori indicators, Doerfler marking and the adaptive loop.

For P1 elements the Laplacian vanishes inside each triangle, so the element
residual of ``-Delta u = lam u`` is ``lam u_h``.  Edge terms use the
averaged normal-derivative jump ``1/2 (grad u|T+ . n+ + grad u|T- . n-)``.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .driver import PaseConfig, pase_solve
from .errors import MeshError
from .fem import FeSpace, assemble, build_prolongation, gradients
from .mesh import build_lshape_mesh, mesh_edges, refine_bisection
from .problems import mesh_hierarchy

__all__ = [
    "ErrorIndicators",
    "element_residual",
    "jump_residual",
    "error_indicator",
    "dorfler_mark",
    "AdaptiveRound",
    "adaptive_solve",
    "uniform_lshape_eigenvalues",
    "richardson_limit",
    "dofs_for_error",
    "write_indicators_csv",
]

log = logging.getLogger(__name__)

_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass
class ErrorIndicators:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0):
            raise ValueError("indicators must be nonnegative")

    @property
    def total(self):
        return float(np.sum(self.values))


def _nodal(space, U):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[0] == space.ndofs:
        return space.extend(U)
    if U.shape[0] == space.mesh.n_vertices:
        return U
    raise ValueError("U has %d rows; space has %d DOFs / %d vertices"
                     % (U.shape[0], space.ndofs, space.mesh.n_vertices))


def element_residual(space, lam, U, T=None):
    """Squared element residuals ``|lam_i u_i|_{0,T}^2``.

    Parameters
    ----------
    space : FeSpace
    lam : array, shape (m,)
    U : array, shape (ndofs, m) or (n_vertices, m)
    T : int or array of int, optional
        Triangles to evaluate (all by default).

    Returns
    -------
    ndarray, shape (len(T), m) or (m,) for a single triangle
    """
    mesh = space.mesh
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    full = _nodal(space, U)
    single = np.isscalar(T) or (isinstance(T, np.ndarray) and T.ndim == 0)
    tris = np.arange(mesh.n_triangles) if T is None else np.atleast_1d(T)
    _, area = gradients(mesh)
    vals = full[mesh.triangles[tris]]
    mass = np.einsum("tim,ij,tjm->tm", vals, _MASS, vals) * area[tris, None]
    out = mass * lam[None, :] ** 2
    return out[0] if single else out


def _edge_data(mesh):
    edges, tri_edges, counts = mesh_edges(mesh.triangles)
    ne = len(edges)
    # the (up to) two triangles incident to every edge and their local edge ids
    owners = -np.ones((ne, 2), dtype=np.int64)
    local = -np.ones((ne, 2), dtype=np.int64)
    flat = tri_edges.ravel()
    tri_ids = np.repeat(np.arange(mesh.n_triangles), 3)
    loc_ids = np.tile(np.arange(3), mesh.n_triangles)
    order = np.argsort(flat, kind="stable")
    f, t, l = flat[order], tri_ids[order], loc_ids[order]
    first = np.ones(len(f), dtype=bool)
    first[1:] = f[1:] != f[:-1]
    owners[f[first], 0], local[f[first], 0] = t[first], l[first]
    owners[f[~first], 1], local[f[~first], 1] = t[~first], l[~first]
    return edges, tri_edges, counts, owners, local


def _outward_normals(mesh, tris, loc):
    # unit outward normal of local edge `loc` (opposite vertex loc) of each triangle
    p = mesh.vertices[mesh.triangles[tris]]
    a = p[np.arange(len(tris)), (loc + 1) % 3]
    b = p[np.arange(len(tris)), (loc + 2) % 3]
    d = b - a
    n = np.column_stack([d[:, 1], -d[:, 0]])
    return n / np.linalg.norm(n, axis=1)[:, None]


def _all_jumps(space, full, edges, counts, owners, local):
    mesh = space.mesh
    g, _ = gradients(mesh)
    grad = np.einsum("tkd,tkm->tmd", g, full[mesh.triangles])
    interior = np.flatnonzero(counts == 2)
    t0, t1 = owners[interior, 0], owners[interior, 1]
    n0 = _outward_normals(mesh, t0, local[interior, 0])
    n1 = _outward_normals(mesh, t1, local[interior, 1])
    J = 0.5 * (np.einsum("emd,ed->em", grad[t0], n0) + np.einsum("emd,ed->em", grad[t1], n1))
    return interior, J


def jump_residual(space, U, e):
    """Normal-derivative jump ``1/2 (grad u|T+ . n+ + grad u|T- . n-)`` on interior edge `e`.

    `e` indexes the sorted edge list of :func:`pase.mesh.mesh_edges`.
    Returns one value per column of `U`.
    """
    mesh = space.mesh
    edges, _, counts, owners, local = _edge_data(mesh)
    if not 0 <= e < len(edges):
        raise MeshError("edge %d out of range" % e)
    if counts[e] != 2:
        raise MeshError("edge %d lies on the boundary" % e)
    full = _nodal(space, U)
    g, _ = gradients(mesh)
    out = 0.0
    for side in range(2):
        t = owners[e, side]
        grad = g[t].T @ full[mesh.triangles[t]]
        nrm = _outward_normals(mesh, np.array([t]), np.array([local[e, side]]))[0]
        out = out + 0.5 * (nrm @ grad)
    return np.atleast_1d(out)


def error_indicator(space, lam, U):
    """Per-triangle ``eta^2(T) = h_T^2 |R_T|^2 + sum_e h_e |J_e|_{0,e}^2``, summed over eigenpairs.

    ``h_T`` is the triangle diameter; every interior edge term is charged
    to both incident triangles.
    """
    mesh = space.mesh
    full = _nodal(space, U)
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    edges, tri_edges, counts, owners, local = _edge_data(mesh)
    elen = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    h_T = elen[tri_edges].max(axis=1)
    R2 = element_residual(space, lam, full)
    eta = (h_T ** 2)[:, None] * R2
    interior, J = _all_jumps(space, full, edges, counts, owners, local)
    edge_term = np.zeros((len(edges), J.shape[1]))
    edge_term[interior] = (elen[interior] ** 2)[:, None] * J ** 2
    eta = eta + edge_term[tri_edges].sum(axis=1)
    return ErrorIndicators(eta.sum(axis=1))


def dorfler_mark(ind, fraction=0.4):
    """Smallest set of triangles carrying at least `fraction` of the total indicator.

    Greedy by descending value; ties go to the lower triangle index.
    ``fraction=1`` marks every triangle with a nonzero indicator.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1], got %r" % (fraction,))
    v = ind.values if isinstance(ind, ErrorIndicators) else np.asarray(ind, dtype=np.float64)
    if fraction == 1:
        return np.flatnonzero(v > 0)
    total = float(np.sum(v))
    if total <= 0:
        raise ValueError("total indicator is zero")
    order = np.lexsort((np.arange(len(v)), -v))
    csum = np.cumsum(v[order])
    count = int(np.searchsorted(csum, fraction * total, side="left")) + 1
    return np.sort(order[:min(count, len(v))])


def write_indicators_csv(path, ind):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle", "eta2"])
        for t, v in enumerate(ind.values):
            w.writerow([t, "%.17g" % v])


@dataclass
class AdaptiveRound:
    round: int
    ndofs: int
    ntriangles: int
    eigenvalues: np.ndarray
    eta2: float
    outer_iterations: int
    converged: bool
    marked: int = 0


@dataclass
class AdaptiveResult:
    rounds: list = field(default_factory=list)
    mesh: object = None
    eigenvalues: np.ndarray = None
    vectors: np.ndarray = None
    hierarchy: object = field(default=None, repr=False)


def adaptive_solve(n0=16, nev=1, rounds=12, fraction=0.4, cfg=None, indicator_dir=None):
    """Estimate, mark and bisect on the L-shaped domain, solving with the level-0 space as coarse space.

    Round 0 solves on the level-0 mesh; each later round refines the marked
    triangles and warm-starts from the interpolated previous eigenvectors.

    Returns
    -------
    AdaptiveResult
        One :class:`AdaptiveRound` per solve (``rounds + 1`` in total).
    """
    cfg = cfg or PaseConfig(nev=nev)
    base = build_lshape_mesh(n0)
    mesh = base
    res = AdaptiveResult()
    warm = None
    for r in range(rounds + 1):
        hier = mesh_hierarchy(base, mesh)
        lam, U, rep = pase_solve(hier, cfg, warm_start=warm)
        lam_blk, U_blk = rep.block
        ind = error_indicator(hier.fine_space, lam, U)
        if indicator_dir is not None:
            write_indicators_csv("%s/indicators_round%02d.csv" % (indicator_dir, r), ind)
        rec = AdaptiveRound(r, hier.n_fine, mesh.n_triangles, lam.copy(), ind.total, rep.outer_iterations, rep.converged)
        res.rounds.append(rec)
        log.info("round %d: %d dofs, lambda_1 %.10f, eta2 %.3e", r, hier.n_fine, lam[0], ind.total)
        res.mesh, res.eigenvalues, res.vectors, res.hierarchy = mesh, lam, U, hier
        if r == rounds:
            break
        marked = dorfler_mark(ind, fraction)
        rec.marked = len(marked)
        new = refine_bisection(mesh, marked)
        I = build_prolongation(hier.fine_space, FeSpace(new))
        warm = (lam_blk, I @ U_blk)
        mesh = new
    return res


def uniform_lshape_eigenvalues(ns, k=1):
    """Smallest `k` P1 eigenvalues of the L-shaped Laplacian on uniform meshes with ``n`` cells per unit.

    Returns a list of ``(ndofs, eigenvalues)``.
    """
    out = []
    for n in ns:
        space = FeSpace(build_lshape_mesh(n))
        A, B = assemble(space)
        vals = spla.eigsh(A.tocsc(), k=k, M=B.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False)
        out.append((space.ndofs, np.sort(vals)))
    return out


def richardson_limit(values):
    """Extrapolate the limit of a sequence converging geometrically under mesh halving.

    The rate is estimated from the last three terms (Aitken); returns
    ``(limit, rate)``.
    """
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 3:
        raise ValueError("need at least three values")
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    rate = d2 / d1
    return float(v[-1] + d2 * rate / (1.0 - rate)), float(rate)


def dofs_for_error(ndofs, errors, target):
    """DOFs at which the piecewise power-law fit through ``(ndofs, errors)`` reaches `target`."""
    n = np.log(np.asarray(ndofs, dtype=np.float64))
    e = np.log(np.asarray(errors, dtype=np.float64))
    t = np.log(target)
    for i in range(len(n) - 1):
        if e[i] >= t >= e[i + 1]:
            s = (t - e[i]) / (e[i + 1] - e[i])
            return float(np.exp(n[i] + s * (n[i + 1] - n[i])))
    slope = (e[-1] - e[-2]) / (n[-1] - n[-2])
    return float(np.exp(n[-1] + (t - e[-1]) / slope))
