"""
Outer augmented-subspace iteration on a two-level hierarchy.

One correction step smooths the current fine eigenvectors, solves the
eigenproblem on ``V_H + span(U_hat)``, maps the result back to the fine
space and smooths again.  :func:`pase_solve` repeats it until the fine
residual criterion holds; :func:`batch_solve` splits the wanted eigenpairs
into batches and tracks each batch with shifted interior solves.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .augmented import AugmentedPencil, apply_shift, assemble_augmented, back_transform, precond_transform
from .errors import CaptureError, CriterionUndefinedError, DegenerateInputError, DimensionError
from .gcg import gcg_aug, gcg_aug_shifted
from .linalg import _orthonormalize, as_multivector, dense_sym_geig, spmv
from .solvers import BcgConfig, block_cg

__all__ = [
    "PaseConfig",
    "BatchConfig",
    "ConvergenceReport",
    "correction_step",
    "pase_solve",
    "compute_batch_shift",
    "select_by_component",
    "batch_solve",
    "check_convergence",
    "coarse_eigenpairs",
    "guard_count",
    "lower_guard_count",
]

log = logging.getLogger(__name__)

PRECOND_MODES = ("none", "A", "B", "B-A")


@dataclass
class BatchConfig:
    batch_sizes: List[int]
    oversample: Optional[int] = None
    shift_sign: int = 1
    workers: int = 1

    def __post_init__(self):
        self.batch_sizes = [int(k) for k in self.batch_sizes]
        if not self.batch_sizes or min(self.batch_sizes) < 1:
            raise ValueError("every batch size must be >= 1")
        if self.oversample is not None and self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        if self.shift_sign not in (1, -1):
            raise ValueError("shift_sign must be +1 or -1")

    def oversample_for(self, k):
        return self.oversample if self.oversample is not None else max(2, math.ceil(k / 4))


@dataclass
class PaseConfig:
    nev: int
    tol: float = 1e-8
    max_outer: int = 30
    cg: BcgConfig = field(default_factory=BcgConfig)
    precond_mode: str = "none"
    batch: Optional[BatchConfig] = None
    guards: Optional[int] = None
    inner_tol_ratio: float = 0.1

    def __post_init__(self):
        if self.nev < 1:
            raise ValueError("nev must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.precond_mode not in PRECOND_MODES:
            raise ValueError("precond_mode must be one of %s" % (PRECOND_MODES,))
        if self.batch is not None and sum(self.batch.batch_sizes) != self.nev:
            raise ValueError("batch sizes sum to %d, nev is %d" % (sum(self.batch.batch_sizes), self.nev))


@dataclass
class ConvergenceReport:
    residuals: list = field(default_factory=list)
    eigenvalues: list = field(default_factory=list)
    outer_iterations: int = 0
    converged: bool = False
    final_eigenvalues: Optional[np.ndarray] = None
    label: str = ""
    capture_retries: int = 0
    block: Optional[tuple] = field(default=None, repr=False)

    @property
    def max_residuals(self):
        return np.array([np.max(r) for r in self.residuals])

    @property
    def contraction_factors(self):
        """Ratios of successive maximum residuals, one per outer iteration after the first."""
        r = self.max_residuals
        if len(r) < 3:
            return np.zeros(0)
        return r[2:] / r[1:-1]

    def contraction(self):
        """Geometric mean of :attr:`contraction_factors` (nan if fewer than one ratio)."""
        f = self.contraction_factors
        f = f[f > 0]
        return float(np.exp(np.mean(np.log(f)))) if f.size else float("nan")


def guard_count(k):
    """Extra columns carried beside `k` wanted eigenpairs."""
    return max(2, math.ceil(0.2 * k))


def lower_guard_count(k):
    """Columns carried below a batch of `k` eigenpairs that does not start at the bottom."""
    return max(2, math.ceil(0.5 * k))


def check_convergence(A_h, B_h, lam, U, tol, return_residuals=False):
    """Per-column test of ``|A x - lam B x|_2 / |lam| <= tol``.

    Columns are scaled to unit B-norm first, so the test does not depend
    on the scaling of `U`.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    U = as_multivector(U)
    if U.shape[1] != lam.shape[0]:
        raise DimensionError("%d eigenvalues for %d vectors" % (lam.shape[0], U.shape[1]))
    if np.any(lam == 0):
        raise CriterionUndefinedError("eigenvalue 0 in column %d" % int(np.flatnonzero(lam == 0)[0]))
    AU, BU = spmv(A_h, U), spmv(B_h, U)
    bn = np.sqrt(np.einsum("ij,ij->j", U, BU))
    res = np.linalg.norm(AU - BU * lam[None, :], axis=0) / (np.abs(lam) * bn)
    flags = res <= tol
    return (flags, res) if return_residuals else flags


def coarse_eigenpairs(A_H, B_H, count, dense_limit=2000, tol=1e-12):
    """Smallest `count` coarse eigenpairs, B-orthonormal and ascending."""
    count = min(count, A_H.shape[0])
    if A_H.shape[0] <= dense_limit:
        return dense_sym_geig(A_H.toarray(), B_H.toarray(), k=count)
    empty = np.zeros((A_H.shape[0], 0))
    P = AugmentedPencil(A_H, B_H, empty, empty, np.zeros((0, 0)), np.zeros((0, 0)))
    X0 = np.random.default_rng(0).standard_normal((A_H.shape[0], count + guard_count(count)))
    r = gcg_aug(P, count, X0, tol=tol, max_sweeps=500)
    return r.eigenvalues, r.vectors.u_H


def _fine_rayleigh_ritz(A_h, B_h, V):
    Q, BQ, _ = _orthonormalize(V, B_h, 1e-10)
    if Q.shape[1] < V.shape[1]:
        raise DegenerateInputError("fine block lost rank: %d of %d columns" % (Q.shape[1], V.shape[1]))
    G = Q.T @ spmv(A_h, Q)
    lam, C = np.linalg.eigh(0.5 * (G + G.T))
    return lam, Q @ C


def _smooth(A_h, B_h, U, lam, cg):
    RHS = spmv(B_h, U) * lam[None, :]
    X, _, _ = block_cg(A_h, RHS, U, cg)
    return X


def _prepare(hier, lam, U, cfg):
    U_hat = _smooth(hier.A_h, hier.B_h, U, lam, cfg.cg)
    U_hat, BU, _ = _orthonormalize(U_hat, hier.B_h, 1e-10)
    if U_hat.shape[1] < U.shape[1]:
        raise DegenerateInputError("smoothed block has B-rank %d < %d" % (U_hat.shape[1], U.shape[1]))
    P = assemble_augmented(hier.A_H, hier.B_H, hier.A_h, hier.B_h, hier.restrict, U_hat)
    return U_hat, P


def _finish(hier, U_hat, xs, lam, cfg):
    U_ritz = spmv(hier.prolong, xs.u_H) + U_hat @ xs.gamma
    U_post = _smooth(hier.A_h, hier.B_h, U_ritz, lam, cfg.cg)
    return _fine_rayleigh_ritz(hier.A_h, hier.B_h, U_post)


def correction_step(hier, lam, U, cfg, stats=None):
    """One augmented-subspace correction of the block ``(lam, U)``.

    Parameters
    ----------
    hier : Hierarchy
    lam : array, shape (k,)
        Current eigenvalue approximations (positive).
    U : array, shape (n_fine, k)
    cfg : PaseConfig
        Uses ``cg``, ``precond_mode``, ``tol`` and ``inner_tol_ratio``.
    stats : dict, optional
        Receives the inner solver history under ``"gcg"``.

    Returns
    -------
    lam, U : ndarray
        Ascending eigenvalues and B_h-orthonormal fine vectors after the
        smoothing, augmented solve, back mapping and a second smoothing.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    U = as_multivector(U)
    if U.shape[1] != lam.shape[0]:
        raise DimensionError("%d eigenvalues for %d vectors" % (lam.shape[0], U.shape[1]))
    if np.any(lam <= 0):
        raise ValueError("eigenvalue approximations must be positive")
    k = U.shape[1]
    U_hat, P = _prepare(hier, lam, U, cfg)
    Q, td = precond_transform(P, cfg.precond_mode)
    X0 = np.vstack([np.zeros((P.n_coarse, k)), np.eye(k)])
    res = gcg_aug(Q, k, X0, tol=cfg.tol * cfg.inner_tol_ratio, cg=cfg.cg)
    if stats is not None:
        stats["gcg"] = res
    xs = back_transform(td, res.vectors)
    return _finish(hier, U_hat, xs, res.eigenvalues, cfg)


def _initial_block(hier, lam_H, u_H, lo, hi):
    return lam_H[lo:hi].copy(), spmv(hier.prolong, u_H[:, lo:hi])


def _record(report, hier, lam, U, targets, tol):
    flags, res = check_convergence(hier.A_h, hier.B_h, lam[targets], U[:, targets], tol, return_residuals=True)
    report.residuals.append(res)
    report.eigenvalues.append(lam[targets].copy())
    return bool(flags.all())


def pase_solve(hier, cfg, warm_start=None):
    """Smallest ``cfg.nev`` eigenpairs of the fine pencil.

    Parameters
    ----------
    hier : Hierarchy
    cfg : PaseConfig
        ``cfg.batch`` set delegates to :func:`batch_solve`.
    warm_start : tuple (lam, U), optional
        Initial fine block used instead of interpolated coarse eigenvectors;
        it must have at least ``nev`` columns.

    Returns
    -------
    lam : ndarray, shape (nev,)
    U : ndarray, shape (n_fine, nev)
        B_h-orthonormal.
    report : ConvergenceReport
        ``converged`` is False when ``max_outer`` ran out.
    """
    if cfg.batch is not None:
        lam, U, reports = batch_solve(hier, cfg)
        merged = ConvergenceReport(label="batched", outer_iterations=max(r.outer_iterations for r in reports),
                                   converged=all(r.converged for r in reports), final_eigenvalues=lam)
        return lam, U, merged
    nev = cfg.nev
    if warm_start is None and nev > hier.n_coarse:
        raise DimensionError("coarse space has %d DOFs, nev is %d" % (hier.n_coarse, nev))
    width = min(nev + (cfg.guards if cfg.guards is not None else guard_count(nev)), hier.n_fine)
    if warm_start is not None:
        lam, U = warm_start
        lam, U = np.asarray(lam, dtype=np.float64), as_multivector(U)
        if U.shape[1] < nev:
            raise DimensionError("warm start has %d columns, nev is %d" % (U.shape[1], nev))
    else:
        lam_H, u_H = coarse_eigenpairs(hier.A_H, hier.B_H, width)
        lam, U = _initial_block(hier, lam_H, u_H, 0, len(lam_H))
    targets = np.arange(nev)
    report = ConvergenceReport(label="plain")
    done = _record(report, hier, lam, U, targets, cfg.tol)
    while not done and report.outer_iterations < cfg.max_outer:
        lam, U = correction_step(hier, lam, U, cfg)
        report.outer_iterations += 1
        done = _record(report, hier, lam, U, targets, cfg.tol)
        log.debug("outer %d: max residual %.3e", report.outer_iterations, report.residuals[-1].max())
    report.converged = done
    report.final_eigenvalues = lam[:nev].copy()
    report.block = (lam, U)
    return lam[:nev], U[:, :nev], report


def compute_batch_shift(lam_H, m, k, sign=1):
    """Shift for the batch covering coarse indices ``m .. m + k - 1`` (zero based).

    ``sign=1`` gives the midpoint of the bracketing coarse eigenvalues;
    ``sign=-1`` gives half their difference instead.
    """
    lam_H = np.asarray(lam_H, dtype=np.float64)
    if k < 1 or m < 0 or m + k > lam_H.shape[0]:
        raise IndexError("batch %d..%d outside %d coarse eigenvalues" % (m, m + k - 1, lam_H.shape[0]))
    return 0.5 * (lam_H[m] + sign * lam_H[m + k - 1])


def component_scores(x, b_h, beta):
    """B-norms squared of the projections of augmented vectors onto ``span(U_hat)``."""
    try:
        c = np.linalg.cholesky(0.5 * (beta + beta.T))
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError("beta is not positive definite") from exc
    rhs = x.u_H.T @ b_h + x.gamma.T @ beta
    X = np.linalg.solve(beta, rhs.T).T
    return np.einsum("ij,jk,ik->i", X, beta, X), X


def select_by_component(x, P, k):
    """Indices of the `k` columns of `x` with the largest component in ``span(U_hat)``.

    Parameters
    ----------
    x : AugmentedVector, width n >= k
        Candidate eigenvectors in untransformed coordinates of `P`.
    P : AugmentedPencil
        Supplies ``b_h`` and ``beta``.
    k : int

    Returns
    -------
    idx : ndarray of int, shape (k,)
        Selected columns, in the candidate order.
    scores : ndarray, shape (n,)
    """
    if x.width < k:
        raise DimensionError("%d candidates for %d selections" % (x.width, k))
    scores, _ = component_scores(x, P.b_h, P.beta)
    idx = np.sort(np.argsort(-scores, kind="stable")[:k])
    return idx, scores


def _batch_ranges(cfg, available):
    if cfg.nev > available:
        raise DimensionError("coarse space provides %d eigenpairs, nev is %d" % (available, cfg.nev))
    out, m = [], 0
    for k in cfg.batch.batch_sizes:
        g = cfg.guards if cfg.guards is not None else guard_count(k)
        g_lo = cfg.guards if cfg.guards is not None else lower_guard_count(k)
        lo, hi = max(0, m - g_lo), min(available, m + k + g)
        out.append((m, k, lo, hi))
        m += k
    return out


def _shifted_solve(hier, P, U_hat, theta, lam_H, u_H, lo, hi, extra, cfg):
    # n eigenpairs nearest theta, padded with coarse eigenvectors nearest theta outside the batch
    k = hi - lo
    n = k + extra
    outside = np.array([j for j in range(len(lam_H)) if j < lo or j >= hi], dtype=np.int64)
    pad = outside[np.argsort(np.abs(lam_H[outside] - theta), kind="stable")[:extra]]
    X0 = np.zeros((P.size, n))
    X0[P.n_coarse:, :k] = np.eye(k)
    X0[: P.n_coarse, k:k + len(pad)] = u_H[:, pad]
    S = apply_shift(P, theta)
    Q, td = precond_transform(S, cfg.precond_mode)
    res = gcg_aug_shifted(Q, theta, n, X0, tol=cfg.tol * cfg.inner_tol_ratio, cg=cfg.cg)
    return res, back_transform(td, res.vectors)


def _run_batch(hier, cfg, lam_H, u_H, m, k, lo, hi, index):
    label = "batch %d (eigenpairs %d..%d)" % (index, m, m + k - 1)
    report = ConvergenceReport(label=label)
    kk = hi - lo
    targets = np.arange(m - lo, m - lo + k)
    if lo == 0:
        sub = replace(cfg, nev=k, batch=None, guards=hi - m - k)
        lam, U, rep = pase_solve(hier, sub)
        rep.label = label
        return lam, U, rep
    theta = compute_batch_shift(lam_H, lo, kk, cfg.batch.shift_sign)
    base = cfg.batch.oversample_for(kk)
    lam, U = _initial_block(hier, lam_H, u_H, lo, hi)
    done = _record(report, hier, lam, U, targets, cfg.tol)
    while not done and report.outer_iterations < cfg.max_outer:
        U_hat, P = _prepare(hier, lam, U, cfg)
        extra = base
        for attempt in range(3):
            res, xs = _shifted_solve(hier, P, U_hat, theta, lam_H, u_H, lo, hi, extra, cfg)
            idx, scores = select_by_component(xs, P, kk)
            if scores[idx].min() >= 0.5:
                break
            if attempt == 2:
                raise CaptureError("%s: targets not captured near shift %.6g" % (label, theta))
            extra *= 2
            report.capture_retries += 1
        sel = idx[np.argsort(res.eigenvalues[idx], kind="stable")]
        lam, U = _finish(hier, U_hat, xs.columns(sel), res.eigenvalues[sel], cfg)
        report.outer_iterations += 1
        done = _record(report, hier, lam, U, targets, cfg.tol)
    report.converged = done
    report.final_eigenvalues = lam[targets].copy()
    return lam[targets], U[:, targets], report


def batch_solve(hier, cfg):
    """Smallest ``cfg.nev`` eigenpairs computed batch by batch.

    Every batch carries guard columns on both sides, tracks its eigenpairs
    with shifted interior solves on its own augmented space, keeps the
    candidates with the largest component in that space, and runs its own
    outer loop.  Batches only share the coarse eigenpairs and may run in
    parallel (``cfg.batch.workers``).

    Returns
    -------
    lam : ndarray, shape (nev,)
    U : ndarray, shape (n_fine, nev)
    reports : list of ConvergenceReport, one per batch

    Raises
    ------
    CaptureError
        If a batch loses its eigenpairs after two oversample increases.
    """
    if cfg.batch is None:
        raise ValueError("batch_solve needs cfg.batch")
    g_max = max(cfg.guards if cfg.guards is not None else lower_guard_count(k) for k in cfg.batch.batch_sizes)
    over = max(2 * cfg.batch.oversample_for(k + 2 * g_max) for k in cfg.batch.batch_sizes) * 2
    lam_H, u_H = coarse_eigenpairs(hier.A_H, hier.B_H, min(cfg.nev + g_max + over, hier.n_coarse))
    ranges = _batch_ranges(cfg, min(len(lam_H), hier.n_fine))

    def job(i):
        m, k, lo, hi = ranges[i]
        return _run_batch(hier, cfg, lam_H, u_H, m, k, lo, hi, i)

    if cfg.batch.workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=cfg.batch.workers) as ex:
            outs = list(ex.map(job, range(len(ranges))))
    else:
        outs = [job(i) for i in range(len(ranges))]
    lam = np.concatenate([o[0] for o in outs])
    U = np.hstack([o[1] for o in outs])
    return lam, U, [o[2] for o in outs]
