"""Block conjugate gradient for symmetric positive definite (shifted) operators."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IndefiniteError
from .linalg import apply, as_multivector

__all__ = ["BcgConfig", "block_cg"]


@dataclass
class BcgConfig:
    max_iters: int = 40
    rel_tol: float = 1e-12
    shift: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


def block_cg(A, RHS, X0=None, cfg=None, shift_B=None, callback=None, precond=None):
    """Solve ``(A - shift * B) X = RHS`` column by column with shared products.

    Every column runs its own CG recurrence; operator applications are
    batched over the still-active columns.  A column is frozen as soon as its
    true residual satisfies ``|r_j| <= rel_tol * |rhs_j|`` and is never
    touched again.

    Parameters
    ----------
    A : sparse matrix, ndarray or callable
    RHS : array, shape (n, m)
    X0 : array, shape (n, m), optional
        Initial guess (zero if omitted).
    cfg : BcgConfig, optional
    shift_B : matrix or callable, optional
        Second operator for the shifted system; ``cfg.shift`` is its weight.
    callback : callable, optional
        Called as ``callback(iteration, X)`` after every iteration.
    precond : callable, optional
        Symmetric positive definite preconditioner applied to residual
        blocks; none by default.

    Returns
    -------
    X : ndarray, shape (n, m)
    iters : int
        Number of iterations performed (0 if `X0` already satisfies the
        tolerance).
    residuals : ndarray, shape (m,)
        Final relative residual norms ``|r_j| / |rhs_j|`` (absolute where
        ``rhs_j = 0``).

    Raises
    ------
    IndefiniteError
        If ``p^T (A - shift B) p <= 0`` is met for some column.
    """
    cfg = cfg or BcgConfig()
    RHS = as_multivector(RHS)
    n, m = RHS.shape
    X = np.zeros_like(RHS) if X0 is None else as_multivector(X0).copy()
    if X.shape != RHS.shape:
        raise DimensionError("block_cg: X0 shape %s differs from RHS shape %s" % (X.shape, RHS.shape))
    if m == 0:
        return X, 0, np.zeros(0)

    if shift_B is not None and cfg.shift != 0.0:
        def op(Z):
            return apply(A, Z) - cfg.shift * apply(shift_B, Z)
    else:
        def op(Z):
            return apply(A, Z)

    bnorm = np.linalg.norm(RHS, axis=0)
    target = cfg.rel_tol * bnorm
    R = RHS - op(X)
    rnorm = np.linalg.norm(R, axis=0)
    active = rnorm > target

    def prec(Rb):
        return Rb.copy() if precond is None else as_multivector(precond(Rb))

    Z = prec(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    iters = 0

    while active.any() and iters < cfg.max_iters:
        iters += 1
        act = np.flatnonzero(active)
        Pa = P[:, act]
        APa = op(Pa)
        pap = np.einsum("ij,ij->j", Pa, APa)
        bad = pap <= 0
        if bad.any():
            col = int(act[np.flatnonzero(bad)[0]])
            raise IndefiniteError("block_cg: p^T A p <= 0 in column %d" % col)
        alpha = rz[act] / pap
        X[:, act] += Pa * alpha
        R[:, act] -= APa * alpha
        Ra = R[:, act]
        Za = prec(Ra)
        rz_new = np.einsum("ij,ij->j", Ra, Za)

        done = np.linalg.norm(Ra, axis=0) <= target[act]
        if done.any():
            # confirm with the true residual before freezing
            cand = act[done]
            Rtrue = RHS[:, cand] - op(X[:, cand])
            tnorm = np.linalg.norm(Rtrue, axis=0)
            ok = tnorm <= target[cand]
            active[cand[ok]] = False
            retry = cand[~ok]
            if retry.size:
                R[:, retry] = Rtrue[:, ~ok]
                Zr = prec(Rtrue[:, ~ok])
                P[:, retry] = Zr
                rz[retry] = np.einsum("ij,ij->j", Rtrue[:, ~ok], Zr)
        go = act[~done]
        if go.size:
            beta = rz_new[~done] / rz[go]
            P[:, go] = Za[:, ~done] + P[:, go] * beta
            rz[go] = rz_new[~done]
        if callback is not None:
            callback(iters, X)

    resid = np.linalg.norm(RHS - op(X), axis=0)
    scale = np.where(bnorm > 0, bnorm, 1.0)
    return X, iters, resid / scale
