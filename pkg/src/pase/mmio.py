"""
Matrix Market coordinate I/O for real sparse matrices.

Only the ``matrix coordinate real {general,symmetric}`` flavour is
supported.  Values are written with 17 significant digits so that a
write/read cycle reproduces every ``float64`` bit-exactly.
"""
import numpy as np
import scipy.sparse as sp

from .errors import MatrixMarketError
from .linalg import as_csr, is_symmetric

__all__ = ["read_matrix_market", "write_matrix_market"]


def write_matrix_market(path, A, symmetric=None, comment=None):
    """Write `A` (sparse or dense) to `path`.

    If `symmetric` is None it is detected exactly; symmetric matrices store
    only their lower triangle.
    """
    A = as_csr(A)
    if symmetric is None:
        symmetric = A.shape[0] == A.shape[1] and is_symmetric(A, 0.0)
    C = sp.tril(A).tocoo() if symmetric else A.tocoo()
    order = np.lexsort((C.row, C.col))
    kind = "symmetric" if symmetric else "general"
    with open(path, "w") as fh:
        fh.write("%%%%MatrixMarket matrix coordinate real %s\n" % kind)
        if comment:
            for line in str(comment).splitlines():
                fh.write("%% %s\n" % line)
        fh.write("%d %d %d\n" % (A.shape[0], A.shape[1], C.nnz))
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write("%d %d %.17g\n" % (i + 1, j + 1, v))


def read_matrix_market(path, sym_tol=1e-12):
    """Read a Matrix Market coordinate file into a canonical CSR matrix.

    In files declared symmetric, an entry given in both triangles must agree
    with its mirror to ``sym_tol`` relative; the mirror is filled in
    otherwise.

    Raises
    ------
    MatrixMarketError
        On a malformed header, bad size line, out-of-range index or an
        asymmetric symmetric-declared file.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("%s: empty file" % path)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("%s: malformed header %r" % (path, lines[0]))
    obj, fmt, field, symm = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError("%s: only 'matrix coordinate' is supported" % path)
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError("%s: unsupported field %r" % (path, field))
    if symm not in ("general", "symmetric"):
        raise MatrixMarketError("%s: unsupported symmetry %r" % (path, symm))

    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MatrixMarketError("%s: missing size line" % path)
    try:
        nrows, ncols, nnz = (int(t) for t in body[0].split())
    except ValueError:
        raise MatrixMarketError("%s: malformed size line %r" % (path, body[0])) from None
    entries = body[1:]
    if len(entries) != nnz:
        raise MatrixMarketError("%s: expected %d entries, found %d" % (path, nnz, len(entries)))

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for n, ln in enumerate(entries):
        tok = ln.split()
        if len(tok) != 3:
            raise MatrixMarketError("%s: malformed entry %r" % (path, ln))
        try:
            rows[n], cols[n], vals[n] = int(tok[0]) - 1, int(tok[1]) - 1, float(tok[2])
        except ValueError:
            raise MatrixMarketError("%s: malformed entry %r" % (path, ln)) from None
    bad = (rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols)
    if np.any(bad):
        n = int(np.flatnonzero(bad)[0])
        raise MatrixMarketError(
            "%s: entry %d index (%d, %d) out of bounds for %dx%d"
            % (path, n + 1, rows[n] + 1, cols[n] + 1, nrows, ncols)
        )

    if symm == "symmetric":
        if nrows != ncols:
            raise MatrixMarketError("%s: symmetric matrix must be square" % path)
        lower = rows >= cols
        L = as_csr(sp.coo_matrix((vals[lower], (rows[lower], cols[lower])), shape=(nrows, ncols)))
        if not np.all(lower):
            # entries given in the upper triangle must mirror a lower one
            r, c, v = cols[~lower], rows[~lower], vals[~lower]
            mirror = np.asarray(L[r, c]).ravel()
            scale = max(np.abs(vals).max(), 0.0)
            if np.any(np.abs(mirror - v) > sym_tol * scale):
                raise MatrixMarketError("%s: symmetric-declared file is not symmetric" % path)
        A = as_csr(L + sp.tril(L, -1).T)
    else:
        A = as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)))
    return A
