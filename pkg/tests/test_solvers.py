import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from pase.errors import DimensionError, IndefiniteError
from pase.solvers import BcgConfig, block_cg

from _util import random_spd


def _laplace1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_block_cg_solves_laplacian():
    A = _laplace1d(50)
    rng = np.random.default_rng(0)
    RHS = rng.standard_normal((50, 4))
    X, iters, res = block_cg(A, RHS, cfg=BcgConfig(max_iters=200, rel_tol=1e-12))
    assert_allclose(A @ X, RHS, atol=1e-10)
    assert np.all(res <= 1e-12)
    assert iters <= 50


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 20), m=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_exact_termination_in_n_steps(n, m, seed):
    # exact-arithmetic CG terminates in at most n steps; allow a few extra for rounding
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond=50.0)
    RHS = rng.standard_normal((n, m))
    X, iters, res = block_cg(A, RHS, cfg=BcgConfig(max_iters=n + 3, rel_tol=1e-10))
    assert iters <= n + 3
    assert np.all(res <= 1e-10)
    assert_allclose(X, np.linalg.solve(A, RHS), rtol=1e-7, atol=1e-9)


def test_block_cg_freezes_converged_columns():
    A = _laplace1d(30)
    e = np.zeros((30, 1))
    e[0] = 1.0
    x = np.linalg.solve(A.toarray(), e)
    RHS = np.hstack([e, np.ones((30, 1))])
    X0 = np.hstack([x, np.zeros((30, 1))])
    seen = []
    block_cg(A, RHS, X0, BcgConfig(max_iters=5), callback=lambda it, X: seen.append(X[:, 0].copy()))
    for col in seen:
        assert np.array_equal(col, x[:, 0])


def test_block_cg_zero_iterations_when_converged():
    A = _laplace1d(10)
    b = np.ones((10, 1))
    x = np.linalg.solve(A.toarray(), b)
    X, iters, _ = block_cg(A, b, x)
    assert iters == 0


def test_block_cg_shifted_operator():
    rng = np.random.default_rng(2)
    A, B = random_spd(rng, 15, cond=10.0), random_spd(rng, 15, cond=10.0)
    mu = 0.5 * np.linalg.eigvalsh(A).min() / np.linalg.eigvalsh(B).max()
    rhs = rng.standard_normal((15, 2))
    X, _, _ = block_cg(A, rhs, cfg=BcgConfig(max_iters=100, rel_tol=1e-13, shift=mu), shift_B=B)
    assert_allclose((A - mu * B) @ X, rhs, atol=1e-10)


def test_block_cg_preconditioner_is_exact_inverse():
    rng = np.random.default_rng(3)
    A = random_spd(rng, 25, cond=1e6)
    Ainv = np.linalg.inv(A)
    rhs = rng.standard_normal((25, 3))
    X, iters, _ = block_cg(A, rhs, cfg=BcgConfig(max_iters=5, rel_tol=1e-10), precond=lambda R: Ainv @ R)
    assert iters <= 2
    assert_allclose(A @ X, rhs, atol=1e-8)


def test_block_cg_detects_indefinite():
    A = np.diag([1.0, -1.0])
    with pytest.raises(IndefiniteError, match="column 0"):
        block_cg(A, np.array([[0.0], [1.0]]))


def test_block_cg_shape_checks():
    with pytest.raises(DimensionError):
        block_cg(np.eye(3), np.ones((3, 2)), np.ones((3, 1)))
    X, iters, res = block_cg(np.eye(3), np.ones((3, 0)))
    assert X.shape == (3, 0) and iters == 0 and res.size == 0


def test_config_validation():
    with pytest.raises(ValueError):
        BcgConfig(max_iters=0)
    with pytest.raises(ValueError):
        BcgConfig(rel_tol=0.0)
