"""
Block GCG eigensolvers on an augmented pencil.

:func:`gcg_aug` computes the smallest eigenpairs with the subspace
``[X, P, W]``, B-orthonormalization and Rayleigh-Ritz, locking the leading
converged columns.  :func:`gcg_aug_shifted` targets the eigenvalues nearest
a shift with harmonic Rayleigh-Ritz extraction on a Euclidean-orthonormal
basis, followed by a standard Rayleigh-Ritz step on the final block.

Both solvers touch the pencil only through ``P.matvec`` (and the solves of
:mod:`pase.augmented`); coordinates are the stacked ``(u_H; gamma)`` form.
"""
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .augmented import AugmentedVector, factored_shift_solve, probe_spd, shift_factorization
from .errors import DegenerateInputError, DimensionError, IndefiniteError, PaseError, ShiftProximityError
from .linalg import _orthonormalize, as_multivector, dense_sym_geig
from .solvers import BcgConfig, block_cg

__all__ = ["GcgResult", "gcg_aug", "gcg_aug_shifted", "rayleigh_ritz", "compute_w", "compute_p", "select_mu"]


@dataclass
class GcgResult:
    eigenvalues: np.ndarray
    vectors: AugmentedVector
    residuals: np.ndarray
    converged: bool
    sweeps: int
    history: list = field(default_factory=list)


def _stacked(X):
    if isinstance(X, AugmentedVector):
        return X.stack()
    return as_multivector(X).copy()


def _sym(M):
    return 0.5 * (M + M.T)


def rayleigh_ritz(V, P, check_tol=1e-10):
    """Ritz pairs of the pencil on the B-orthonormal block `V`.

    Returns ascending Ritz values and the orthonormal coefficient matrix.
    """
    Z = _stacked(V)
    G = Z.T @ P.matvec("A", Z)
    scale = max(np.abs(G).max(initial=0.0), 1.0)
    if np.abs(G - G.T).max(initial=0.0) > check_tol * scale:
        raise PaseError("projected matrix is not symmetric; basis is inconsistent with the pencil")
    return np.linalg.eigh(_sym(G))


def compute_p(X_new, X_old, B, drop_tol=1e-10):
    """Component of `X_new` B-orthogonal to the B-orthonormal block `X_old`.

    Columns whose B-norm falls below ``drop_tol`` times the largest B-norm of
    `X_new` are removed; the block may come back empty.
    """
    X_new = as_multivector(X_new)
    X_old = as_multivector(X_old)
    if X_new.shape[0] != X_old.shape[0]:
        raise DimensionError("compute_p: dims %d and %d differ" % (X_new.shape[0], X_old.shape[0]))
    BXn = B(X_new) if callable(B) else B @ X_new
    ref = np.sqrt(max(np.einsum("ij,ij->j", X_new, BXn).max(initial=0.0), 0.0))
    if X_old.shape[1]:
        Pb = X_new - X_old @ (X_old.T @ BXn)
        BP = B(Pb) if callable(B) else B @ Pb
    else:
        Pb, BP = X_new.copy(), BXn
    norms = np.sqrt(np.maximum(np.einsum("ij,ij->j", Pb, BP), 0.0))
    return Pb[:, norms > drop_tol * ref]


def select_mu(ritz, P, mu_ok=-np.inf, max_tries=60):
    """Pick the inner-solve shift below the current Ritz values.

    ``mu = min(ritz) - 0.1 * spread(ritz)``; if ``A - mu B`` fails the
    positive definiteness probe, ``mu`` is lowered by geometrically growing
    steps.  Values not above an already verified ``mu_ok`` skip the probe.
    """
    lo, hi = float(np.min(ritz)), float(np.max(ritz))
    spread = hi - lo if hi > lo else abs(lo)
    mu = lo - 0.1 * spread
    if mu <= mu_ok:
        return mu
    step = max(0.1 * spread, 1e-3 * abs(lo), 1e-12)
    for _ in range(max_tries):
        if probe_spd(P, mu):
            return mu
        mu -= step
        step *= 2.0
    raise IndefiniteError("no shift below the Ritz values makes A - mu B positive definite")


def compute_w(P, X, lam, mu, cfg=None, cache=None, precondition=True):
    """Inverse-iteration block ``W ~ (A - mu B)^{-1} (B X diag(lam))``, started from ``X diag(lam / (lam - mu))``.

    Pencils in mode ``'B-A'`` use :func:`factored_shift_solve`.  Otherwise
    block CG runs on the full pencil, preconditioned by the block
    factorization of ``A - mu B`` unless ``precondition`` is False.
    Returns ``(W, iters, cache)``; `cache` holds the block factorization.
    """
    cfg = cfg or BcgConfig()
    X = as_multivector(X)
    lam = np.asarray(lam, dtype=np.float64)
    RHS = P.matvec("B", X) * lam[None, :]
    # scaled start: the initial CG residual is then a multiple of the
    # eigen-residual, so truncated inner solves do not stall the outer loop
    gap = lam - mu
    X = X * np.where(gap != 0, lam / np.where(gap != 0, gap, 1.0), 1.0)[None, :]
    if P.mode == "B-A":
        return factored_shift_solve(P, mu, RHS, X, cfg, cache)
    prec = None
    if precondition:
        cache = shift_factorization(P, mu, cache)
        prec = cache.inverse
    W, iters, _ = block_cg(P.op("A"), RHS, X, replace(cfg, shift=mu), shift_B=P.op("B"), precond=prec)
    return W, iters, cache


def _residuals(AX, BX, lam):
    R = AX - BX * lam[None, :]
    denom = np.where(lam != 0, np.abs(lam), np.inf)
    return np.linalg.norm(R, axis=0) / denom


def gcg_aug(P, nev, X0, tol=1e-9, max_sweeps=100, cg=None, drop_tol=1e-10, precondition=True):
    """Smallest `nev` eigenpairs of the augmented pencil.

    Parameters
    ----------
    P : AugmentedPencil
    nev : int
    X0 : AugmentedVector or array, width >= nev
        Initial block; its width is the block size.
    tol : float
        Per-column bound on ``|A x - lam B x|_2 / |lam|`` in stacked coordinates.
    max_sweeps : int
    cg : BcgConfig, optional
        Inner solver settings for the ``W`` block.
    precondition : bool
        Precondition the ``W`` solves with the block factorization of
        ``A - mu B`` (see :func:`compute_w`).

    Returns
    -------
    GcgResult
        Ascending eigenvalues, B-orthonormal vectors and one history record
        per sweep.  ``converged`` is False if `max_sweeps` ran out.
    """
    cg = cg or BcgConfig()
    opA, opB = P.op("A"), P.op("B")
    Z0 = _stacked(X0)
    if Z0.shape[0] != P.size:
        raise DimensionError("initial block has dim %d, pencil size is %d" % (Z0.shape[0], P.size))
    if Z0.shape[1] < nev:
        raise DimensionError("initial block width %d < nev %d" % (Z0.shape[1], nev))
    X, BX, _ = _orthonormalize(Z0, opB, drop_tol)
    if X.shape[1] < nev:
        raise DegenerateInputError("initial block has B-rank %d < nev %d" % (X.shape[1], nev))
    AX = opA(X)
    lam, C = np.linalg.eigh(_sym(X.T @ AX))
    X, AX, BX = X @ C, AX @ C, BX @ C
    bs = X.shape[1]

    locked = 0
    Pblk = np.zeros((P.size, 0))
    mu_ok = -np.inf
    cache = None
    history = []
    converged = False
    sweep = 0
    while True:
        res = _residuals(AX, BX, lam)
        conv = res <= tol
        head = conv[:nev]
        prefix = nev if head.all() else int(np.argmin(head))
        locked = max(locked, prefix)
        history.append({
            "sweep": sweep,
            "eigenvalues": lam[:nev].copy(),
            "residuals": res[:nev].copy(),
            "locked": locked,
        })
        if head.all():
            converged = True
            break
        if sweep >= max_sweeps:
            break
        sweep += 1

        act = np.array([j for j in range(locked, bs) if not conv[j]], dtype=np.int64)
        mu = select_mu(lam, P, mu_ok)
        mu_ok = max(mu_ok, mu)
        W, inner, cache = compute_w(P, X[:, act], lam[act], mu, cg, cache, precondition)
        history[-1].update(mu=mu, inner_iters=inner)

        Y, BY = X[:, :locked], BX[:, :locked]
        V, BV, _ = _orthonormalize(np.hstack([X[:, locked:], Pblk, W]), opB, drop_tol, Y, BY)
        AV = opA(V)
        theta, C = np.linalg.eigh(_sym(V.T @ AV))
        nact = min(bs - locked, V.shape[1])
        C = C[:, :nact]
        Xa, AXa, BXa = V @ C, AV @ C, BV @ C
        Pblk = compute_p(Xa, X[:, locked:], opB, drop_tol)
        X = np.hstack([Y, Xa])
        AX = np.hstack([AX[:, :locked], AXa])
        BX = np.hstack([BY, BXa])
        lam = np.concatenate([lam[:locked], theta[:nact]])

    order = np.argsort(lam, kind="stable")[:nev]
    Xr = X[:, order]
    return GcgResult(
        eigenvalues=lam[order],
        vectors=AugmentedVector.from_stacked(Xr, P.n_coarse),
        residuals=res[order],
        converged=converged,
        sweeps=sweep,
        history=history,
    )


def _harmonic(MV, BV, count):
    # solve (MV)^T (MV) c = nu (MV)^T (BV) c; keep `count` values nearest 0
    G = _sym(MV.T @ MV)
    H = MV.T @ BV
    try:
        L = scipy.linalg.cholesky(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ShiftProximityError("shifted operator is numerically singular on the search space; perturb the shift") from exc
    T = scipy.linalg.solve_triangular(L, scipy.linalg.solve_triangular(L, H.T, lower=True).T, lower=True)
    sigma, Y = scipy.linalg.eig(T)
    order = np.argsort(-np.abs(sigma), kind="stable")[:count]
    C = scipy.linalg.solve_triangular(L.T, np.real(Y[:, order]), lower=False)
    C /= np.linalg.norm(C, axis=0)
    return C


def gcg_aug_shifted(P, theta, n, X0, tol=1e-9, max_sweeps=200, cg=None, drop_tol=1e-10, precondition=True):
    """The `n` eigenpairs of the pencil nearest to `theta`.

    The A side is shifted to ``M = A - theta B`` (accounting for any shift
    already applied to `P`).  Search directions come from
    ``W = M^{-1} B X diag(rho)``, solved by CG when `M` passes the
    definiteness probe and by CG on the normal equations otherwise.

    Returns
    -------
    GcgResult
        Eigenvalues of the pencil (unshifted), ordered by distance to
        `theta`, with B-orthonormal vectors from a final Rayleigh-Ritz step.
        History records carry ``normal_equations=True`` on sweeps that used
        the normal-equations fallback.
    """
    cg = cg or BcgConfig()
    delta = theta - P.shift
    opB = P.op("B")

    def opM(Z):
        AZ = P.matvec("A", Z)
        return AZ - delta * P.matvec("B", Z) if delta != 0.0 else AZ

    Z0 = _stacked(X0)
    if Z0.shape[0] != P.size:
        raise DimensionError("initial block has dim %d, pencil size is %d" % (Z0.shape[0], P.size))
    if Z0.shape[1] < n:
        raise DimensionError("initial block width %d < n %d" % (Z0.shape[1], n))
    X, _, _ = _orthonormalize(Z0, None, drop_tol)
    bs = X.shape[1]
    if bs < n:
        raise DegenerateInputError("initial block has rank %d < n %d" % (bs, n))
    spd = probe_spd(P, delta)
    fac = None
    if precondition:
        fac = shift_factorization(P, delta, definite=spd)

    def ritz_block(V):
        MV, BV = opM(V), opB(V)
        C = _harmonic(MV, BV, min(bs, V.shape[1]))
        Xn = V @ C
        return Xn, MV @ C, BV @ C

    X, MX, BX = ritz_block(X)
    history = []
    converged = False
    sweep = 0
    Pblk = np.zeros((P.size, 0))
    while True:
        rho = np.einsum("ij,ij->j", X, MX) / np.einsum("ij,ij->j", X, BX)
        res = _residuals(MX, BX, rho) * np.abs(rho) / np.where(rho + theta != 0, np.abs(rho + theta), np.inf)
        conv = res <= tol
        history.append({
            "sweep": sweep,
            "eigenvalues": (rho[:n] + theta).copy(),
            "residuals": res[:n].copy(),
            "normal_equations": not spd,
        })
        if conv[:n].all():
            converged = True
            break
        if sweep >= max_sweeps:
            break
        sweep += 1

        act = np.flatnonzero(~conv)
        RHS = BX[:, act] * rho[act][None, :]
        if spd:
            W, _, _ = block_cg(opM, RHS, X[:, act], cg, precond=fac and fac.inverse)
        else:
            prec = fac and (lambda Z: fac.inverse(fac.inverse(Z)))
            W, _, _ = block_cg(lambda Z: opM(opM(Z)), opM(RHS), X[:, act], cg, precond=prec)
        V, _, _ = _orthonormalize(np.hstack([X, Pblk, W]), None, drop_tol)
        X_old = X
        X, MX, BX = ritz_block(V)
        Pblk = compute_p(X, X_old, lambda Z: Z, drop_tol)

    # final standard Rayleigh-Ritz on the harmonic block
    Q, BQ, _ = _orthonormalize(X, opB, drop_tol)
    MQ = opM(Q)
    nu, C = dense_sym_geig(_sym(Q.T @ MQ), _sym(Q.T @ BQ), k=n, theta=0.0)
    Xf = Q @ C
    lam = nu + theta
    MXf, BXf = MQ @ C, BQ @ C
    res = np.linalg.norm(MXf - BXf * nu[None, :], axis=0) / np.where(lam != 0, np.abs(lam), np.inf)
    return GcgResult(
        eigenvalues=lam,
        vectors=AugmentedVector.from_stacked(Xf, P.n_coarse),
        residuals=res,
        converged=converged and bool(np.all(res <= tol * 10)),
        sweeps=sweep,
        history=history,
    )
