"""Deterministic inner-product kernels.

Every score in the package goes through these loops.  Each output element is
accumulated sequentially over coordinates in float64, so a score comes out
bit-identical whether it was computed for one pair, a subset of rows or a
full matrix.  Exact ties (a query sampled from the item set) then resolve the
same way in the oracles and in the indexes.

float32 * float32 is exact in float64, so FMA contraction cannot change the
result either.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def dot(a, b):
    s = 0.0
    for t in range(a.shape[0]):
        s += np.float64(a[t]) * np.float64(b[t])
    return s


@njit(cache=True)
def rows_dot(X, v):
    n, d = X.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for t in range(d):
            s += np.float64(X[i, t]) * np.float64(v[t])
        out[i] = s
    return out


@njit(cache=True)
def rows_dot_subset(X, rows, v):
    d = X.shape[1]
    out = np.empty(rows.shape[0], dtype=np.float64)
    for r in range(rows.shape[0]):
        i = rows[r]
        s = 0.0
        for t in range(d):
            s += np.float64(X[i, t]) * np.float64(v[t])
        out[r] = s
    return out


@njit(cache=True)
def rows_dot_range(X, start, stop, v):
    d = X.shape[1]
    out = np.empty(stop - start, dtype=np.float64)
    for i in range(start, stop):
        s = 0.0
        for t in range(d):
            s += np.float64(X[i, t]) * np.float64(v[t])
        out[i - start] = s
    return out


@njit(cache=True)
def cross_dot(A, BT):
    """C[i, j] = <A[i], B[j]> with B passed transposed (d, n).

    The inner loop runs over j so it vectorizes, while every C[i, j] still
    sees the same coordinate order as :func:`rows_dot`.
    """
    m, d = A.shape
    n = BT.shape[1]
    C = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for t in range(d):
            a = np.float64(A[i, t])
            for j in range(n):
                C[i, j] += a * np.float64(BT[t, j])
    return C
