import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from pase.augmented import AugmentedVector, apply_shift, precond_transform
from pase.errors import DegenerateInputError, DimensionError, PaseError
from pase.gcg import compute_p, compute_w, gcg_aug, gcg_aug_shifted, rayleigh_ritz, select_mu
from pase.linalg import b_orthonormalize
from pase.solvers import BcgConfig

from _util import random_pencil


def _start(P, width, rng):
    return rng.standard_normal((P.size, width))


@pytest.mark.parametrize("mode", ["none", "A", "B", "B-A"])
def test_gcg_aug_smallest_pairs(mode):
    rng = np.random.default_rng(0)
    P0 = random_pencil(rng, 40, 5)
    P, _ = precond_transform(P0, mode)
    ref = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    res = gcg_aug(P, 4, _start(P, 6, rng), tol=1e-8, max_sweeps=200)
    assert res.converged
    assert_allclose(res.eigenvalues[:4], ref[:4], rtol=1e-9)
    Z = res.vectors.stack()
    assert_allclose(Z.T @ P.dense("B") @ Z, np.eye(Z.shape[1]), atol=1e-10)
    assert [h["sweep"] for h in res.history] == list(range(len(res.history)))


def test_gcg_aug_unpreconditioned_inner_solves():
    rng = np.random.default_rng(1)
    P = random_pencil(rng, 20, 3, cond=20.0)
    ref = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    res = gcg_aug(P, 3, _start(P, 5, rng), tol=1e-9, max_sweeps=300, precondition=False)
    assert res.converged
    assert_allclose(res.eigenvalues[:3], ref[:3], rtol=1e-8)


def test_gcg_aug_locking_is_monotone():
    rng = np.random.default_rng(2)
    P = random_pencil(rng, 30, 4)
    res = gcg_aug(P, 4, _start(P, 6, rng), tol=1e-8)
    locked = [h["locked"] for h in res.history]
    assert locked == sorted(locked)


def test_gcg_aug_rejects_degenerate_start():
    rng = np.random.default_rng(3)
    P = random_pencil(rng, 10, 2)
    X = rng.standard_normal((12, 1))
    with pytest.raises(DegenerateInputError):
        gcg_aug(P, 3, np.hstack([X, X, 2 * X]))
    with pytest.raises(DimensionError):
        gcg_aug(P, 2, rng.standard_normal((11, 3)))


def test_rayleigh_ritz_detects_inconsistent_basis():
    rng = np.random.default_rng(4)
    P = random_pencil(rng, 6, 2)
    V, _ = b_orthonormalize(rng.standard_normal((8, 3)), P.dense("B"))
    theta, C = rayleigh_ritz(V, P)
    assert np.all(np.diff(theta) >= 0)

    class Broken:
        def matvec(self, side, Z):
            M = np.triu(np.ones((8, 8)))
            return M @ Z

    with pytest.raises(PaseError):
        rayleigh_ritz(V, Broken())


def test_compute_p_is_b_orthogonal():
    rng = np.random.default_rng(5)
    P = random_pencil(rng, 10, 2)
    B = P.dense("B")
    X_old, _ = b_orthonormalize(rng.standard_normal((12, 3)), B)
    X_new = X_old @ rng.standard_normal((3, 3)) + 1e-3 * rng.standard_normal((12, 3))
    Pb = compute_p(X_new, X_old, B)
    assert_allclose(X_old.T @ B @ Pb, 0, atol=1e-12)
    assert compute_p(X_old, X_old, B).shape[1] == 0


def test_select_mu_is_below_spectrum():
    rng = np.random.default_rng(6)
    P = random_pencil(rng, 10, 2)
    lam = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    # Ritz values from a poor subspace sit far above lam[0]
    mu = select_mu(lam[3:6], P)
    assert mu < lam[0]


def test_compute_w_matches_direct_solve():
    rng = np.random.default_rng(7)
    P = random_pencil(rng, 12, 3)
    lam = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    mu = lam[0] - 1.0
    X = rng.standard_normal((15, 2))
    theta = np.array([2.0, 3.0])
    W, _, _ = compute_w(P, X, theta, mu, BcgConfig(max_iters=100, rel_tol=1e-13))
    direct = np.linalg.solve(P.dense("A") - mu * P.dense("B"), P.dense("B") @ X * theta)
    assert_allclose(W, direct, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_shifted_nearest_pairs(seed):
    rng = np.random.default_rng(seed)
    P = random_pencil(rng, 30, 6)
    ref = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    theta = rng.uniform(ref[2], ref[-3])
    n = 3
    want = ref[np.argsort(np.abs(ref - theta), kind="stable")[:n]]
    res = gcg_aug_shifted(P, theta, n, _start(P, n + 2, rng), tol=1e-8, max_sweeps=300)
    assert res.converged
    assert_allclose(np.sort(res.eigenvalues), np.sort(want), rtol=1e-8)
    d = np.abs(res.eigenvalues - theta)
    assert np.all(np.diff(d) >= 0)


def test_shifted_on_shifted_pencil():
    rng = np.random.default_rng(11)
    P = random_pencil(rng, 20, 3)
    ref = scipy.linalg.eigh(P.dense("A"), P.dense("B"), eigvals_only=True)
    theta = 0.5 * (ref[5] + ref[6]) + 0.1 * (ref[6] - ref[5])
    S, _ = precond_transform(apply_shift(P, theta), "B")
    res = gcg_aug_shifted(S, theta, 2, _start(P, 4, rng), tol=1e-8, max_sweeps=300)
    want = ref[np.argsort(np.abs(ref - theta))[:2]]
    assert_allclose(np.sort(res.eigenvalues), np.sort(want), rtol=1e-8)
    # indefinite shifted operator goes through the normal equations
    assert all(h["normal_equations"] for h in res.history)
    assert isinstance(res.vectors, AugmentedVector)
