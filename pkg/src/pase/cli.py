"""
Command line experiment driver.

``pase --config run.ini [--mode M] [--threads N] [--out DIR] [--seed S]``

Writes ``eigenvalues.csv``, ``history.csv`` and ``summary.json`` to the
output directory.  The exit status is 0 exactly when every requested
eigenpair passed the residual criterion; errors map to the codes in
:data:`EXIT_CODES`.
"""
import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import errors
from .adaptive import adaptive_solve, dofs_for_error, richardson_limit, uniform_lshape_eigenvalues
from .config import parse_config
from .driver import BatchConfig, PaseConfig, batch_solve, check_convergence, pase_solve
from .linalg import as_csr
from .mmio import read_matrix_market
from .problems import Hierarchy, square_analytic, square_hierarchy, variable_diffusion, variable_potential
from .solvers import BcgConfig

__all__ = ["main", "run", "load_pencil", "EXIT_CODES"]

log = logging.getLogger("pase")

EXIT_CODES = {
    errors.ConfigError: 2,
    errors.MatrixMarketError: 3,
    errors.DimensionError: 4,
    errors.IndefiniteError: 5,
    errors.SingularityError: 6,
    errors.MeshError: 7,
    errors.NestingError: 7,
    errors.ShiftProximityError: 8,
    errors.DegenerateInputError: 9,
    errors.CaptureError: 10,
    errors.CriterionUndefinedError: 11,
    errors.PaseError: 12,
    OSError: 13,
}
NOT_CONVERGED = 1


def exit_code_for(exc):
    for cls in type(exc).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 70


def load_pencil(matrix_path_A, matrix_path_B, prolongation_path, coarse_A=None, coarse_B=None):
    """Hierarchy from Matrix Market files.

    Without coarse files the coarse pencil is the Galerkin product
    ``I^T A_h I``, ``I^T B_h I`` of the prolongation ``I``.
    """
    A_h = read_matrix_market(matrix_path_A)
    B_h = read_matrix_market(matrix_path_B)
    I = read_matrix_market(prolongation_path)
    if A_h.shape != B_h.shape or A_h.shape[0] != A_h.shape[1]:
        raise errors.DimensionError("fine matrices have shapes %s and %s" % (A_h.shape, B_h.shape))
    if I.shape[0] != A_h.shape[0]:
        raise errors.DimensionError("prolongation has %d rows, fine pencil has %d" % (I.shape[0], A_h.shape[0]))
    if coarse_A is not None:
        A_H, B_H = read_matrix_market(coarse_A), read_matrix_market(coarse_B)
    else:
        A_H = as_csr(I.T @ A_h @ I)
        B_H = as_csr(I.T @ B_h @ I)
        A_H = as_csr(0.5 * (A_H + A_H.T))
        B_H = as_csr(0.5 * (B_H + B_H.T))
    return Hierarchy(A_H, B_H, A_h, B_h, I)


def _pase_config(rc, batch=False):
    bc = None
    if batch:
        bc = BatchConfig(rc.batch_sizes, rc.oversample, rc.shift_sign, rc.workers)
    return PaseConfig(
        nev=rc.nev,
        tol=rc.tol,
        max_outer=rc.max_outer,
        cg=BcgConfig(max_iters=rc.cg_max_iters, rel_tol=rc.cg_rel_tol),
        precond_mode=rc.precond,
        batch=bc,
        guards=rc.guards,
    )


def _square(rc, fine_n):
    if rc.problem == "variable":
        return square_hierarchy(rc.coarse_n, fine_n, variable_diffusion, variable_potential)
    return square_hierarchy(rc.coarse_n, fine_n)


class _Sink:
    # collects rows for the three output files
    def __init__(self):
        self.eig_rows = []
        self.hist_rows = []
        self.summary = {"runs": {}}
        self.all_converged = True

    def add_run(self, name, hier, lam, U, tol, reports, extra=None):
        flags, res = check_convergence(hier.A_h, hier.B_h, lam, U, tol, return_residuals=True)
        for i, (l, r, f) in enumerate(zip(lam, res, flags)):
            self.eig_rows.append([name, i, "%.17g" % l, "%.17g" % r, int(bool(f))])
        offset = 0
        for rep in reports:
            for it, rr in enumerate(rep.residuals):
                for j, r in enumerate(rr):
                    self.hist_rows.append([name, rep.label, it, offset + j, "%.17g" % r])
            offset += len(rep.residuals[0]) if rep.residuals else 0
        self.all_converged &= bool(flags.all())
        entry = {
            "ndofs_coarse": int(hier.n_coarse),
            "ndofs_fine": int(hier.n_fine),
            "outer_iterations": [int(r.outer_iterations) for r in reports],
            "converged": [bool(f) for f in flags],
            "eigenvalues": [float(l) for l in lam],
            "contraction": [_finite(r.contraction()) for r in reports],
        }
        entry.update(extra or {})
        self.summary["runs"][name] = entry
        return flags

    def write(self, out):
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "eigenvalues.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "index", "eigenvalue", "residual", "converged"])
            w.writerows(self.eig_rows)
        with open(os.path.join(out, "history.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "block", "outer_iteration", "pair", "residual"])
            w.writerows(self.hist_rows)
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _run_square(rc, sink):
    cfg = _pase_config(rc)
    errs = []
    for n in rc.fine_n:
        hier = _square(rc, n)
        lam, U, rep = pase_solve(hier, cfg)
        extra = {}
        if rc.problem == "laplace":
            exact = square_analytic(len(lam))
            rel = lam / exact - 1.0
            extra = {"analytic": exact.tolist(), "relative_error": rel.tolist(),
                     "upper_bounds": bool(np.all(lam > exact))}
            errs.append(rel)
        rep.label = "n%d" % n
        sink.add_run("n%d" % n, hier, lam, U, rc.tol, [rep], extra)
    if len(errs) > 1:
        sink.summary["error_ratios"] = [(errs[i] / errs[i + 1]).tolist() for i in range(len(errs) - 1)]


def _run_precond(rc, sink):
    hier = _square(rc, rc.fine_n[0])
    results = {}
    for mode in ("none", "A", "B", "B-A"):
        cfg = _pase_config(rc)
        cfg.precond_mode = mode
        lam, U, rep = pase_solve(hier, cfg)
        rep.label = mode
        sink.add_run(mode, hier, lam, U, rc.tol, [rep])
        results[mode] = lam
    modes = list(results)
    diff = max(float(np.max(np.abs(results[a] - results[b]) / np.abs(results[a])))
               for i, a in enumerate(modes) for b in modes[i + 1:])
    sink.summary["max_pairwise_relative_difference"] = diff
    sink.summary["modes_agree"] = diff <= 1e-9


def _run_batch(rc, sink, hier=None):
    hier = hier or _square(rc, rc.fine_n[0])
    cfg = _pase_config(rc, batch=True)
    lam, U, reps = batch_solve(hier, cfg)
    sink.add_run("batched", hier, lam, U, rc.tol, reps,
                 {"batch_sizes": list(rc.batch_sizes), "capture_retries": [r.capture_retries for r in reps]})
    if rc.compare_unbatched:
        lam1, U1, rep1 = pase_solve(hier, _pase_config(rc))
        rep1.label = "unbatched"
        sink.add_run("unbatched", hier, lam1, U1, rc.tol, [rep1])
        sink.summary["max_batch_difference"] = float(np.max(np.abs(lam - lam1) / np.abs(lam1)))


def _run_adaptive(rc, sink):
    cfg = _pase_config(rc)
    out_dir = rc.out if rc.dump_indicators else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    res = adaptive_solve(n0=rc.n0, nev=rc.nev, rounds=rc.rounds, fraction=rc.fraction, cfg=cfg, indicator_dir=out_dir)
    rounds = [{"round": r.round, "ndofs": r.ndofs, "triangles": r.ntriangles, "eta2": r.eta2,
               "eigenvalues": r.eigenvalues.tolist(), "outer_iterations": r.outer_iterations,
               "converged": r.converged, "marked": r.marked} for r in res.rounds]
    hier = res.hierarchy
    sink.add_run("adaptive", hier, res.eigenvalues, res.vectors, rc.tol, [], {"rounds": rounds})
    sink.summary["runs"]["adaptive"]["outer_iterations"] = [r.outer_iterations for r in res.rounds]
    sink.all_converged &= all(r.converged for r in res.rounds)
    if rc.oracle:
        uni = uniform_lshape_eigenvalues([8, 16, 32, 64, 128, 256])
        limit, rate = richardson_limit([v[0] for _, v in uni])
        err = abs(res.eigenvalues[0] / limit - 1.0)
        uerr = [abs(v[0] / limit - 1.0) for _, v in uni]
        sink.summary["oracle"] = {
            "lambda1": limit,
            "rate": rate,
            "adaptive_relative_error": err,
            "adaptive_ndofs": res.rounds[-1].ndofs,
            "uniform_ndofs_for_same_error": dofs_for_error([d for d, _ in uni], uerr, err),
            "uniform": [{"ndofs": d, "lambda1": float(v[0])} for d, v in uni],
        }


def _run_algebraic(rc, sink):
    hier = load_pencil(rc.matrix_A, rc.matrix_B, rc.prolongation, rc.coarse_A, rc.coarse_B)
    if rc.batch_sizes:
        _run_batch(rc, sink, hier)
        return
    lam, U, rep = pase_solve(hier, _pase_config(rc))
    rep.label = "algebraic"
    sink.add_run("algebraic", hier, lam, U, rc.tol, [rep])


RUNNERS = {
    "square-convergence": _run_square,
    "precond-compare": _run_precond,
    "batch": _run_batch,
    "adaptive-lshape": _run_adaptive,
    "algebraic": _run_algebraic,
}


def run(rc):
    """Execute a validated :class:`~pase.config.RunConfig`; returns ``(exit_status, summary)``."""
    sink = _Sink()
    sink.summary.update(mode=rc.mode, seed=rc.seed, warnings=list(rc.warnings))
    np.random.seed(rc.seed)
    limits = threadpool_limits(rc.threads) if rc.threads else contextlib.nullcontext()
    t0 = time.perf_counter()
    with limits:
        RUNNERS[rc.mode](rc, sink)
    sink.summary["all_converged"] = bool(sink.all_converged)
    sink.summary["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
    sink.write(rc.out)
    return (0 if sink.all_converged else NOT_CONVERGED), sink.summary


def build_parser():
    p = argparse.ArgumentParser(prog="pase", description="Augmented subspace eigensolver experiments.")
    p.add_argument("--config", required=True, help="sectioned key=value configuration file")
    p.add_argument("--mode", help="override run.mode")
    p.add_argument("--threads", type=int, help="cap on internal thread pools and batch workers")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {}
    for key, val in (("run.mode", args.mode), ("run.threads", args.threads), ("run.out", args.out), ("run.seed", args.seed)):
        if val is not None:
            overrides[key] = str(val)
    try:
        with open(args.config) as fh:
            text = fh.read()
        rc = parse_config(text, overrides)
        if rc.threads:
            rc.workers = min(rc.workers, rc.threads)
        for w in rc.warnings:
            log.warning(w)
        status, summary = run(rc)
    except (errors.PaseError, OSError) as exc:
        print("pase: error: %s" % exc, file=sys.stderr)
        return exit_code_for(exc)
    if status:
        print("pase: not all eigenpairs converged", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
