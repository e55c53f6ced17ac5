"""
Sparse and blocked dense kernels.

Sparse matrices are :class:`scipy.sparse.csr_matrix` objects kept in
canonical form (sorted, duplicate-free column indices).  Multivectors are
2-D ``float64`` arrays of shape ``(dim, width)``; each column is one vector.
Operators accepted by :func:`apply` may be sparse matrices, dense arrays or
callables mapping a multivector to a multivector.
"""
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionError, IndefiniteError

__all__ = [
    "as_csr",
    "is_symmetric",
    "as_multivector",
    "apply",
    "spmv",
    "block_inner",
    "b_orthonormalize",
    "dense_sym_geig",
]


def as_csr(A):
    """Return `A` as a canonical ``float64`` CSR matrix."""
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, tol=0.0):
    """Check ``|A - A^T|_max <= tol * |A|_max`` for a sparse or dense matrix."""
    if sp.issparse(A):
        D = abs(A - A.T)
        dmax = D.max() if D.nnz else 0.0
        amax = abs(A).max() if A.nnz else 0.0
    else:
        A = np.asarray(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            return False
        dmax = np.max(np.abs(A - A.T), initial=0.0)
        amax = np.max(np.abs(A), initial=0.0)
    return dmax <= tol * amax


def as_multivector(X):
    """View a 1-D or 2-D array as a ``(dim, width)`` float multivector."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError("multivector must be 1-D or 2-D, got ndim=%d" % X.ndim)
    return X


def apply(op, X):
    """Apply a matrix or callable operator to the multivector `X`."""
    if callable(op) and not sp.issparse(op) and not isinstance(op, np.ndarray):
        return op(X)
    return op @ X


def spmv(A, X):
    """Sparse matrix times multivector.

    Parameters
    ----------
    A : sparse matrix, shape (m, n)
    X : array, shape (n,) or (n, w)

    Returns
    -------
    Y : ndarray, shape (m, w)
    """
    X = as_multivector(X)
    if A.shape[1] != X.shape[0]:
        raise DimensionError(
            "spmv: matrix has %d columns, multivector dim is %d" % (A.shape[1], X.shape[0])
        )
    return np.asarray(A @ X, dtype=np.float64).reshape(A.shape[0], X.shape[1])


def block_inner(X, Y, B=None):
    """Gram block ``X^T Y`` or ``X^T B Y``.

    `B` may be a matrix or a callable operator.
    """
    X = as_multivector(X)
    Y = as_multivector(Y)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError("block_inner: dims %d and %d differ" % (X.shape[0], Y.shape[0]))
    if B is None:
        return X.T @ Y
    if not callable(B) or sp.issparse(B) or isinstance(B, np.ndarray):
        if B.shape != (X.shape[0], X.shape[0]):
            raise DimensionError("block_inner: B has shape %s, dim is %d" % (B.shape, X.shape[0]))
    return X.T @ apply(B, Y)


def _orthonormalize(V, B, drop_tol, Q=None, BQ=None):
    # Column-wise Gram-Schmidt, two block projection passes per column.
    # Returns the new basis block, its image under B and the kept input
    # column indices.
    V = as_multivector(V)
    n, m = V.shape
    if m == 0:
        return np.zeros((n, 0)), np.zeros((n, 0)), []
    p = 0 if Q is None else Q.shape[1]
    basis = np.empty((n, p + m))
    images = np.empty((n, p + m))
    if p:
        basis[:, :p] = Q
        images[:, :p] = BQ

    BV = V if B is None else as_multivector(apply(B, V))
    norms2 = np.einsum("ij,ij->j", V, BV)
    if np.any(norms2 < 0):
        j = int(np.argmin(norms2))
        raise IndefiniteError("operator is not positive on column %d (v^T B v = %.3e)" % (j, norms2[j]))
    ref = np.sqrt(norms2.max())
    if ref == 0.0:
        if np.any(V):
            raise IndefiniteError("operator annihilates a nonzero column")
        return np.zeros((n, 0)), np.zeros((n, 0)), []
    cutoff = drop_tol * ref

    kept = []
    c = p
    for j in range(m):
        v = V[:, j].copy()
        if c:
            Qc, BQc = basis[:, :c], images[:, :c]
            for _ in range(2):
                v -= Qc @ (BQc.T @ v)
        bv = v.copy() if B is None else as_multivector(apply(B, v[:, None]))[:, 0]
        nrm2 = v @ bv
        if nrm2 < -(cutoff ** 2):
            raise IndefiniteError("operator is not positive on column %d (v^T B v = %.3e)" % (j, nrm2))
        nrm = np.sqrt(max(nrm2, 0.0))
        if nrm <= cutoff:
            continue
        basis[:, c] = v / nrm
        images[:, c] = bv / nrm
        c += 1
        kept.append(j)
    return basis[:, p:c].copy(), images[:, p:c].copy(), kept


def b_orthonormalize(V, B=None, drop_tol=1e-10, against=None):
    """B-orthonormalize the columns of `V`.

    Columns whose B-norm after projection falls below ``drop_tol`` times the
    largest input column B-norm are removed.

    Parameters
    ----------
    V : array, shape (n, m)
    B : sparse matrix, dense array, callable or None
        Symmetric positive definite operator; ``None`` means the identity.
    drop_tol : float
        Relative dependence threshold.
    against : array, shape (n, p), optional
        Already B-orthonormal block; the result is made B-orthogonal to it.

    Returns
    -------
    Q : ndarray, shape (n, kept_count)
    kept_count : int
    """
    Q0 = BQ0 = None
    if against is not None and against.shape[1]:
        Q0 = as_multivector(against)
        BQ0 = Q0 if B is None else as_multivector(apply(B, Q0))
    Q, _, kept = _orthonormalize(V, B, drop_tol, Q0, BQ0)
    return Q, len(kept)


def dense_sym_geig(A, B=None, k=None, theta=None):
    """Solve the dense symmetric-definite pencil ``A C = B C diag(lam)``.

    With ``theta`` the ``k`` eigenpairs nearest to ``theta`` are returned,
    ordered by distance (ties keep ascending order); otherwise the ``k``
    smallest in ascending order.  Eigenvectors are B-orthonormal.

    Raises
    ------
    IndefiniteError
        If `B` is not positive definite.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError("dense_sym_geig: A must be square, got %s" % (A.shape,))
    if B is not None:
        B = np.asarray(B, dtype=np.float64)
        if B.shape != (n, n):
            raise DimensionError("dense_sym_geig: B has shape %s, A has %s" % (B.shape, A.shape))
    k = n if k is None else min(int(k), n)
    try:
        lam, C = scipy.linalg.eigh(A, B, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteError("mass-side matrix is not positive definite: %s" % exc) from exc
    if theta is None:
        order = np.arange(k)
    else:
        order = np.argsort(np.abs(lam - theta), kind="stable")[:k]
    return lam[order], C[:, order]
