"""Kronecker-product linear algebra on lists of explicit factor matrices.

Index convention used everywhere in the package: the row (column) index of
A_1 x ... x A_d enumerates attribute tuples in row-major order with the
FIRST factor varying slowest.
"""

import numpy as np

from .errors import ShapeError, SizeError

DEFAULT_ENTRY_CAP = 10 ** 8


def kron_matvec(factors, x):
    """Multiply (A_1 x ... x A_d) @ x without materializing the product.

    Factors may be non-square.  Runs in O(N * sum n_i) for square factors.
    """
    x = np.asarray(x, dtype=float)
    cols = [a.shape[1] for a in factors]
    n = int(np.prod(cols))
    if x.shape != (n,):
        raise ShapeError(f"vector has size {x.size}, factors expect {n}")
    t = x.reshape(cols)
    for i, a in enumerate(factors):
        t = np.moveaxis(np.tensordot(a, t, axes=([1], [i])), 0, i)
    return t.reshape(-1)


def kron_materialize(factors, max_entries=DEFAULT_ENTRY_CAP):
    """Dense Kronecker product, guarded by an entry-count cap."""
    rows = int(np.prod([a.shape[0] for a in factors]))
    cols = int(np.prod([a.shape[1] for a in factors]))
    if rows * cols > max_entries:
        raise SizeError(
            f"materialization needs {rows}x{cols} = {rows * cols} entries, "
            f"cap is {max_entries}")
    out = np.ones((1, 1))
    for a in factors:
        out = np.kron(out, a)
    return out


def max_col_norm(matrix, norm):
    """Maximum column norm: L1 or L2."""
    m = np.asarray(matrix, dtype=float)
    if norm == "L1":
        return float(np.abs(m).sum(axis=0).max())
    if norm == "L2":
        return float(np.sqrt((m * m).sum(axis=0).max()))
    raise ValueError(f"unknown norm {norm!r}")


def factor_error(a, gram):
    """tr[(A^T A)^+ G]: squared residual norm of the factor workload under A."""
    ata = a.T @ a
    try:
        return float(np.trace(np.linalg.solve(ata, gram)))
    except np.linalg.LinAlgError:
        return float(np.trace(np.linalg.pinv(ata) @ gram))
