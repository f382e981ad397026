"""Error-free float arithmetic used where rounding would blur an exact identity."""

import math

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def two_product(a, b):
    """Return ``(p, e)`` with ``p = fl(a*b)`` and ``p + e == a*b`` exactly.

    Veltkamp splitting, vectorised over numpy arrays. Exact as long as no
    intermediate overflows or underflows.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = a * b
    ca = _SPLITTER * a
    a_hi = ca - (ca - a)
    a_lo = a - a_hi
    cb = _SPLITTER * b
    b_hi = cb - (cb - b)
    b_lo = b - b_hi
    e = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, e


def exact_dot(a, b):
    """Correctly rounded dot product."""
    p, e = two_product(np.ravel(a), np.ravel(b))
    return math.fsum(np.concatenate([p, e]))


def quadratic_terms(x, weights, scale=1.0):
    """Float terms summing exactly to ``scale * sum(weights * x * x)``.

    ``scale`` must be a power of two (typically +-1) so scaling is exact.
    """
    x = np.ravel(np.asarray(x, dtype=float))
    w = np.ravel(np.asarray(weights, dtype=float))
    p, e = two_product(x, x)
    # weights times the exact square p + e, split again
    p1, e1 = two_product(w, p)
    p2, e2 = two_product(w, e)
    return scale * np.concatenate([p1, e1, p2, e2])


def bilinear_terms(x, matrix, y):
    """Float terms summing exactly to ``<x, matrix @ y>``."""
    x = np.ravel(np.asarray(x, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    pxy, exy = two_product(x[:, None], y[None, :])
    q1, f1 = two_product(matrix, pxy)
    q2, f2 = two_product(matrix, exy)
    return np.concatenate([np.ravel(q1), np.ravel(f1), np.ravel(q2), np.ravel(f2)])


def exact_quadratic(x, weights):
    """Correctly rounded ``sum(weights * x * x)`` for a diagonal weight vector."""
    return math.fsum(quadratic_terms(x, weights))


def fsum_matvec(M, v):
    """``M @ v`` with each row summed by ``math.fsum`` over the rounded products.

    The result does not depend on the order of the terms, so two matrices
    holding the same nonzero products (for example a block row and the
    corresponding row of a stacked matrix padded with zeros) give identical
    bits.
    """
    prods = np.asarray(M, dtype=float) * np.asarray(v, dtype=float)
    return np.array([math.fsum(row) for row in prods]) if prods.ndim == 2 else \
        np.array([math.fsum(prods)])
