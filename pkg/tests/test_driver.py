import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from pase.augmented import AugmentedVector, assemble_augmented
from pase.driver import (
    BatchConfig,
    ConvergenceReport,
    PaseConfig,
    batch_solve,
    check_convergence,
    coarse_eigenpairs,
    compute_batch_shift,
    correction_step,
    guard_count,
    lower_guard_count,
    pase_solve,
    select_by_component,
)
from pase.errors import CriterionUndefinedError, DimensionError
from pase.linalg import b_orthonormalize
from pase.problems import Hierarchy, square_hierarchy

from _util import cluster_ranges, subspace_angle_max


@pytest.fixture(scope="module")
def small():
    h = square_hierarchy(4, 16)
    lam, V = scipy.linalg.eigh(h.A_h.toarray(), h.B_h.toarray())
    return h, lam, V


def test_guard_counts():
    assert [guard_count(k) for k in (1, 5, 10, 11, 20)] == [2, 2, 2, 3, 4]
    assert [lower_guard_count(k) for k in (1, 4, 5, 12)] == [2, 2, 3, 6]


def test_config_validation():
    with pytest.raises(ValueError):
        PaseConfig(nev=0)
    with pytest.raises(ValueError):
        PaseConfig(nev=3, precond_mode="X")
    with pytest.raises(ValueError):
        PaseConfig(nev=3, batch=BatchConfig([1, 1]))
    with pytest.raises(ValueError):
        BatchConfig([2, 0])
    assert BatchConfig([8]).oversample_for(8) == 2
    assert BatchConfig([12]).oversample_for(12) == 3


def test_check_convergence_scale_invariant(small):
    h, lam, V = small
    U = V[:, :4]
    f1, r1 = check_convergence(h.A_h, h.B_h, lam[:4], U, 1e-8, return_residuals=True)
    f2, r2 = check_convergence(h.A_h, h.B_h, lam[:4], U * [1e-3, 5.0, -2.0, 1e4], 1e-8, return_residuals=True)
    assert f1.all() and f2.all()
    assert_allclose(r1, r2, rtol=1e-6, atol=1e-15)
    assert not check_convergence(h.A_h, h.B_h, lam[:4] * 1.001, U, 1e-8).any()
    with pytest.raises(CriterionUndefinedError):
        check_convergence(h.A_h, h.B_h, [0.0], U[:, :1], 1e-8)


def test_coarse_eigenpairs_dense_and_iterative(small):
    h, _, _ = small
    ref = scipy.linalg.eigh(h.A_H.toarray(), h.B_H.toarray(), eigvals_only=True)[:3]
    lam_d, _ = coarse_eigenpairs(h.A_H, h.B_H, 3)
    lam_i, U_i = coarse_eigenpairs(h.A_H, h.B_H, 3, dense_limit=0)
    assert_allclose(lam_d, ref, rtol=1e-12)
    assert_allclose(lam_i, ref, rtol=1e-10)
    assert_allclose(U_i.T @ h.B_H @ U_i, np.eye(3), atol=1e-10)


def test_correction_step_improves_residual(small):
    h, lam_ref, _ = small
    lam_H, u_H = coarse_eigenpairs(h.A_H, h.B_H, 4)
    U = h.prolong @ u_H
    cfg = PaseConfig(nev=4)
    _, r0 = check_convergence(h.A_h, h.B_h, lam_H, U, 1e-8, return_residuals=True)
    lam, U1 = correction_step(h, lam_H, U, cfg)
    _, r1 = check_convergence(h.A_h, h.B_h, lam, U1, 1e-8, return_residuals=True)
    assert r1.max() < 0.2 * r0.max()
    assert np.all(np.diff(lam) >= 0)
    assert np.all(lam >= lam_ref[:4] * (1 - 1e-12))
    assert_allclose(U1.T @ h.B_h @ U1, np.eye(4), atol=1e-10)


@pytest.mark.parametrize("mode", ["none", "A", "B", "B-A"])
def test_pase_solve_matches_dense(small, mode):
    h, lam_ref, V = small
    lam, U, rep = pase_solve(h, PaseConfig(nev=5, precond_mode=mode))
    assert rep.converged
    assert_allclose(lam, lam_ref[:5], rtol=1e-9)
    for a, b in cluster_ranges(lam_ref[:6]):
        if b <= 5:
            assert subspace_angle_max(U[:, a:b], V[:, a:b], h.B_h) < 1e-6
    assert len(rep.residuals) == rep.outer_iterations + 1


def test_pase_solve_warm_start(small):
    h, lam_ref, V = small
    lam, U, rep = pase_solve(h, PaseConfig(nev=3))
    lam2, U2, rep2 = pase_solve(h, PaseConfig(nev=3), warm_start=rep.block)
    assert rep2.outer_iterations == 0
    with pytest.raises(DimensionError):
        pase_solve(h, PaseConfig(nev=4), warm_start=(lam, U))


def test_pase_solve_rejects_oversized_nev():
    h = square_hierarchy(2, 8)
    with pytest.raises(DimensionError):
        pase_solve(h, PaseConfig(nev=2))


def test_report_contraction():
    rep = ConvergenceReport(residuals=[np.array([1.0]), np.array([0.5]), np.array([0.05]), np.array([0.005])])
    assert_allclose(rep.contraction_factors, [0.1, 0.1])
    assert_allclose(rep.contraction(), 0.1)
    assert np.isnan(ConvergenceReport().contraction())


def test_compute_batch_shift():
    lam = np.array([1.0, 2.0, 5.0, 7.0])
    assert compute_batch_shift(lam, 1, 2) == 3.5
    assert compute_batch_shift(lam, 1, 2, sign=-1) == -1.5
    with pytest.raises(IndexError):
        compute_batch_shift(lam, 3, 2)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), n=st.integers(1, 6), seed=st.integers(0, 2**31 - 1))
def test_select_by_component_matches_fine_projection(k, n, seed):
    h = square_hierarchy(2, 8)
    rng = np.random.default_rng(seed)
    # a non-orthonormal augmenting block exercises the general beta path
    U_aug = rng.standard_normal((h.n_fine, k))
    P = assemble_augmented(h.A_H, h.B_H, h.A_h, h.B_h, h.restrict, U_aug)
    x = AugmentedVector(rng.standard_normal((h.n_coarse, n)), rng.standard_normal((k, n)))
    m = max(1, n // 2)
    idx, scores = select_by_component(x, P, m)
    # oracle: B_h-norm of the B_h-orthogonal projection of the fine vectors onto span(U_aug)
    v = h.prolong @ x.u_H + U_aug @ x.gamma
    Q, _ = b_orthonormalize(U_aug, h.B_h)
    oracle = np.sum((Q.T @ (h.B_h @ v)) ** 2, axis=0)
    assert_allclose(scores, oracle, rtol=1e-9, atol=1e-12)
    assert len(idx) == m
    assert np.min(scores[idx]) >= np.max(np.delete(scores, idx), initial=-np.inf) - 1e-12
    with pytest.raises(DimensionError):
        select_by_component(x, P, n + 1)


def test_batch_solve_matches_single_run():
    h = square_hierarchy(8, 32)
    cfg = PaseConfig(nev=12, batch=BatchConfig([6, 6]))
    lam_b, U_b, reps = batch_solve(h, cfg)
    lam, U, _ = pase_solve(h, PaseConfig(nev=12))
    assert len(reps) == 2 and all(r.converged for r in reps)
    assert_allclose(lam_b, lam, rtol=1e-8)
    assert check_convergence(h.A_h, h.B_h, lam_b, U_b, 1e-8).all()
    # delegation through pase_solve returns a merged report
    lam_d, _, rep = pase_solve(h, cfg)
    assert rep.label == "batched"
    assert_allclose(lam_d, lam_b, rtol=1e-12)


def test_batch_solve_parallel_workers_agree():
    h = square_hierarchy(8, 16)
    serial, _, _ = batch_solve(h, PaseConfig(nev=8, batch=BatchConfig([4, 4])))
    par, _, _ = batch_solve(h, PaseConfig(nev=8, batch=BatchConfig([4, 4], workers=2)))
    assert_allclose(par, serial, rtol=1e-12)


def test_hierarchy_dimension_checks():
    h = square_hierarchy(2, 8)
    with pytest.raises(DimensionError):
        Hierarchy(h.A_H, h.B_H, h.A_h[:-1, :-1], h.B_h, h.prolong)
