"""
Structured augmented pencil on ``V_H + span(U_hat)``.

Both sides have the block form ``[[X_H, x_h], [x_h^T, xi]]`` with a sparse
coarse corner ``X_H`` (``N_H x N_H``), a dense coupling block ``x_h``
(``N_H x k``) and a small dense corner ``xi`` (``k x k``).  Vectors of the
augmented space are pairs ``(u_H, gamma)``; the solvers work on the stacked
``(N_H + k, m)`` form and only touch the pencil through :meth:`matvec`.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, IndefiniteError, SingularityError
from .linalg import as_csr, as_multivector, spmv
from .mmio import write_matrix_market
from .solvers import BcgConfig, block_cg

__all__ = [
    "AugmentedPencil",
    "AugmentedVector",
    "TransformData",
    "assemble_augmented",
    "aug_matvec",
    "precond_transform",
    "back_transform",
    "forward_transform",
    "apply_shift",
    "probe_spd",
    "factored_shift_solve",
    "shift_factorization",
    "write_augmented_dense",
]

MODES = ("plain", "A", "B", "B-A")


def _sym(M):
    M = np.asarray(M, dtype=np.float64)
    return 0.5 * (M + M.T)


@dataclass(eq=False)
class AugmentedVector:
    u_H: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.u_H = as_multivector(self.u_H)
        self.gamma = as_multivector(self.gamma)
        if self.u_H.shape[1] != self.gamma.shape[1]:
            raise DimensionError("u_H has %d columns, gamma has %d" % (self.u_H.shape[1], self.gamma.shape[1]))

    @property
    def width(self):
        return self.u_H.shape[1]

    def stack(self):
        return np.vstack([self.u_H, self.gamma])

    @classmethod
    def from_stacked(cls, Z, n_coarse):
        Z = as_multivector(Z)
        return cls(Z[:n_coarse].copy(), Z[n_coarse:].copy())

    def columns(self, idx):
        return AugmentedVector(self.u_H[:, idx], self.gamma[:, idx])


@dataclass(eq=False)
class AugmentedPencil:
    A_H: sp.csr_matrix
    B_H: sp.csr_matrix
    a_h: np.ndarray
    b_h: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    mode: str = "plain"
    shift: float = 0.0
    origin: Optional["AugmentedPencil"] = field(default=None, repr=False)

    @property
    def n_coarse(self):
        return self.A_H.shape[0]

    @property
    def k(self):
        return self.alpha.shape[0]

    @property
    def size(self):
        return self.n_coarse + self.k

    @property
    def a_coupled(self):
        return self.mode not in ("A",)

    @property
    def b_coupled(self):
        return self.mode not in ("B", "B-A")

    def blocks(self, side):
        if side == "A":
            return self.A_H, self.a_h, self.alpha, self.a_coupled
        if side == "B":
            return self.B_H, self.b_h, self.beta, self.b_coupled
        raise ValueError("side must be 'A' or 'B', got %r" % (side,))

    def matvec(self, side, Z):
        """Apply one side to stacked coordinates ``Z`` of shape ``(N_H + k, m)``."""
        Z = as_multivector(Z)
        if Z.shape[0] != self.size:
            raise DimensionError("augmented matvec: vector dim %d, pencil size %d" % (Z.shape[0], self.size))
        corner, coupling, small, coupled = self.blocks(side)
        zH, zg = Z[: self.n_coarse], Z[self.n_coarse:]
        top = spmv(corner, zH)
        bottom = small @ zg
        if coupled:
            top += coupling @ zg
            bottom += coupling.T @ zH
        return np.vstack([top, bottom])

    def op(self, side):
        return lambda Z: self.matvec(side, Z)

    def dense(self, side):
        corner, coupling, small, _ = self.blocks(side)
        return np.block([[corner.toarray(), coupling], [coupling.T, small]])


@dataclass
class TransformData:
    mode: str
    a_hat: Optional[np.ndarray] = None
    b_hat: Optional[np.ndarray] = None

    @property
    def factor(self):
        return self.a_hat if self.mode == "A" else self.b_hat


def assemble_augmented(A_H, B_H, A_h, B_h, restrict, U_hat):
    """Assemble the augmented pencil for the fine block `U_hat`.

    ``a_h = restrict A_h U_hat``, ``alpha = U_hat^T A_h U_hat`` and likewise
    for the mass side; `restrict` is the transpose of the prolongation.
    """
    U = as_multivector(U_hat)
    if U.shape[1] < 1:
        raise DimensionError("U_hat must have at least one column")
    n_H, n_h = restrict.shape
    if U.shape[0] != n_h or A_h.shape != (n_h, n_h) or B_h.shape != (n_h, n_h):
        raise DimensionError("fine operators / U_hat inconsistent with restriction %s" % (restrict.shape,))
    if A_H.shape != (n_H, n_H) or B_H.shape != (n_H, n_H):
        raise DimensionError("coarse operators inconsistent with restriction %s" % (restrict.shape,))
    AU = spmv(A_h, U)
    BU = spmv(B_h, U)
    return AugmentedPencil(
        A_H=as_csr(A_H),
        B_H=as_csr(B_H),
        a_h=spmv(restrict, AU),
        b_h=spmv(restrict, BU),
        alpha=_sym(U.T @ AU),
        beta=_sym(U.T @ BU),
    )


def aug_matvec(P, side, x):
    """``(top, bottom) = (X_H u_H + x_h gamma, x_h^T u_H + xi gamma)`` for the chosen side."""
    if x.u_H.shape[0] != P.n_coarse or x.gamma.shape[0] != P.k:
        raise DimensionError("augmented vector (%d, %d) does not fit pencil (%d, %d)"
                             % (x.u_H.shape[0], x.gamma.shape[0], P.n_coarse, P.k))
    return AugmentedVector.from_stacked(P.matvec(side, x.stack()), P.n_coarse)


def _corner_factor(M):
    try:
        lu = spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:
        raise SingularityError("corner block is singular: %s" % exc) from exc
    return lu


def _corner_solve(M, R, lu=None):
    lu = lu or _corner_factor(M)
    X = lu.solve(np.asarray(R, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise SingularityError("corner block is numerically singular")
    return X


def precond_transform(P, mode):
    """Congruence transform that decouples one side of the pencil.

    ``mode='A'`` makes the A side block diagonal using ``a_hat = A_H^{-1} a_h``;
    ``'B'`` does the same for the B side with ``b_hat = B_H^{-1} b_h``;
    ``'B-A'`` is the B transform, tagged so inner shifted solves use the
    block factorization of :func:`factored_shift_solve`.  All modes keep the
    spectrum.
    """
    if P.mode != "plain":
        raise ValueError("precond_transform expects an untransformed pencil, got mode %r" % P.mode)
    if mode in ("none", "plain", None):
        return P, TransformData("plain")
    if mode not in MODES:
        raise ValueError("unknown precondition mode %r" % (mode,))
    if mode == "A":
        h = _corner_solve(P.A_H, P.a_h)
        a_h = np.zeros_like(P.a_h)
        alpha = _sym(P.alpha - P.a_h.T @ h)
        BHh = spmv(P.B_H, h)
        b_h = P.b_h - BHh
        beta = _sym(P.beta - P.b_h.T @ h - h.T @ P.b_h + h.T @ BHh)
        td = TransformData("A", a_hat=h)
    else:
        h = _corner_solve(P.B_H, P.b_h)
        b_h = np.zeros_like(P.b_h)
        beta = _sym(P.beta - P.b_h.T @ h)
        AHh = spmv(P.A_H, h)
        a_h = P.a_h - AHh
        alpha = _sym(P.alpha - P.a_h.T @ h - h.T @ P.a_h + h.T @ AHh)
        td = TransformData(mode, b_hat=h)
    return replace(P, a_h=a_h, b_h=b_h, alpha=alpha, beta=beta, mode=mode, origin=None), td


def back_transform(td, x):
    """Map transformed coordinates back: ``u_H = u~_H - hat gamma~``, ``gamma = gamma~``."""
    if td.mode == "plain":
        return AugmentedVector(x.u_H.copy(), x.gamma.copy())
    h = td.factor
    if h.shape != (x.u_H.shape[0], x.gamma.shape[0]):
        raise DimensionError("transform factor %s does not match vector" % (h.shape,))
    return AugmentedVector(x.u_H - h @ x.gamma, x.gamma.copy())


def forward_transform(td, x):
    """Inverse of :func:`back_transform`."""
    if td.mode == "plain":
        return AugmentedVector(x.u_H.copy(), x.gamma.copy())
    h = td.factor
    if h.shape != (x.u_H.shape[0], x.gamma.shape[0]):
        raise DimensionError("transform factor %s does not match vector" % (h.shape,))
    return AugmentedVector(x.u_H + h @ x.gamma, x.gamma.copy())


def apply_shift(P, theta):
    """Replace the A side by ``A - theta B`` (blockwise); the B side is kept.

    Shifts compose additively and are always applied to the unshifted
    origin pencil.
    """
    if P.mode != "plain":
        raise ValueError("apply_shift expects an untransformed pencil, got mode %r" % P.mode)
    base = P.origin if P.origin is not None else P
    total = P.shift + theta
    if total == 0.0:
        return base
    return replace(
        base,
        A_H=as_csr(base.A_H - total * base.B_H),
        a_h=base.a_h - total * base.b_h,
        alpha=_sym(base.alpha - total * base.beta),
        shift=total,
        origin=base,
    )


def probe_spd(P, mu=0.0, rtol=1e-12):
    """Check that ``A - mu B`` of the pencil is positive (semi)definite.

    Uses a dense Cholesky factorization of the coarse corner and the
    eigenvalues of the Schur complement; a Schur complement that is
    positive semidefinite within ``rtol`` passes, so a rank-deficient
    augmenting block is tolerated.
    """
    M_H = (P.A_H - mu * P.B_H).toarray()
    m = P.a_h - mu * P.b_h
    m_a = P.alpha - mu * P.beta
    try:
        c = scipy.linalg.cho_factor(M_H, check_finite=True)
    except np.linalg.LinAlgError:
        return False
    S = _sym(m_a - m.T @ scipy.linalg.cho_solve(c, m))
    if S.size == 0:
        return True
    ev = np.linalg.eigvalsh(S)
    scale = max(np.abs(m_a).max(), np.abs(ev).max(), 1e-300)
    return ev.min() >= -rtol * scale


class _FactoredShift:
    # block factorization K^T (A - mu B) K = diag(M_H, S), K = [[I, -s], [0, I]]
    def __init__(self, P, mu, definite=True):
        self.mu = mu
        self.definite = definite
        self.n = P.n_coarse
        self.M_H = as_csr(P.A_H - mu * P.B_H)
        self.lu = _corner_factor(self.M_H)
        m = np.zeros_like(P.a_h)
        if P.a_coupled:
            m = m + P.a_h
        if P.b_coupled:
            m = m - mu * P.b_h
        self.s = _corner_solve(self.M_H, m, self.lu)
        S = _sym(P.alpha - mu * P.beta - m.T @ self.s)
        if definite:
            try:
                self.S = scipy.linalg.cho_factor(S)
            except np.linalg.LinAlgError as exc:
                raise IndefiniteError("Schur complement of A - mu B is not positive definite") from exc
        else:
            self.S = scipy.linalg.lu_factor(S)

    def schur_solve(self, r_g):
        if self.definite:
            return scipy.linalg.cho_solve(self.S, r_g)
        return scipy.linalg.lu_solve(self.S, r_g)

    def _split(self, R):
        R = as_multivector(R)
        r_H = R[: self.n]
        return r_H, R[self.n:] - self.s.T @ r_H

    def _join(self, y_H, y_g):
        return np.vstack([y_H - self.s @ y_g, y_g])

    def inverse(self, R):
        """Exact ``(A - mu B)^{-1} R`` from the sparse corner factorization."""
        r_H, r_g = self._split(R)
        return self._join(_corner_solve(self.M_H, r_H, self.lu), self.schur_solve(r_g))


def shift_factorization(P, mu, cache=None, definite=True):
    """Block factorization of ``A - mu B``; `cache` is reused when its shift matches.

    ``definite=False`` allows an indefinite Schur complement (LU instead of
    Cholesky).
    """
    if cache is not None and cache.mu == mu and cache.definite == definite:
        return cache
    return _FactoredShift(P, mu, definite)


def factored_shift_solve(P, mu, RHS, X0, cfg=None, cache=None):
    """Solve ``(A - mu B) W = RHS`` through the congruence of the shifted A side.

    With ``K = [[I, -s], [0, I]]`` and ``s = (A_H - mu B_H)^{-1} m``, where
    ``m`` is the coupling block of ``A - mu B``, the system becomes block
    diagonal: the coarse block is solved with block CG (no coupling
    products), the small block by a dense Cholesky solve.
    Returns ``(W, iters, cache)``.
    """
    fs = shift_factorization(P, mu, cache)
    X0 = as_multivector(X0)
    r_H, r_g = fs._split(RHS)
    y0 = X0[: fs.n] + fs.s @ X0[fs.n:]
    y_H, iters, _ = block_cg(fs.M_H, r_H, y0, cfg or BcgConfig())
    return fs._join(y_H, fs.schur_solve(r_g)), iters, fs


def write_augmented_dense(path, P, side="A"):
    """Dump the assembled ``(N_H + k)^2`` side of the pencil in Matrix Market format."""
    write_matrix_market(path, sp.csr_matrix(P.dense(side)), symmetric=True,
                        comment="augmented pencil side %s mode %s shift %r" % (side, P.mode, P.shift))
