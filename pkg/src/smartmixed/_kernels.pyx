# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: fixed-order matrix product and a fused Adam update.

Both produce the same bits as their numpy counterparts in ``_fallback``.
"""

import numpy as np

from libc.math cimport sqrt

cdef extern from "_gemm.h" nogil:
    int sm_gemm(size_t M, size_t N, size_t K,
                const double *a, ptrdiff_t sa_i, ptrdiff_t sa_k,
                const double *b, ptrdiff_t sb_k, ptrdiff_t sb_j,
                double *c, ptrdiff_t ldc)


def matmul(const double[:, :] a, const double[:, :] b):
    """Return ``a @ b`` accumulated in ascending inner index, no FMA."""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    if b.shape[0] != k:
        raise ValueError(f"inner dimensions differ: {k} vs {b.shape[0]}")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef const double *pa = &a[0, 0] if m > 0 and k > 0 else NULL
    cdef const double *pb = &b[0, 0] if k > 0 and n > 0 else NULL
    cdef double *pc = &c[0, 0] if m > 0 and n > 0 else NULL
    cdef int rc
    with nogil:
        rc = sm_gemm(m, n, k,
                     pa, a.strides[0] // 8, a.strides[1] // 8,
                     pb, b.strides[0] // 8, b.strides[1] // 8,
                     pc, n)
    if rc != 0:
        raise MemoryError("matmul workspace allocation failed")
    return out


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double beta1, double beta2, double bc1, double bc2, double lr, double eps):
    """In-place Adam step on flat contiguous buffers."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, r1 = 1.0 / bc1, r2 = 1.0 / bc2, gi, mi, vi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam buffers differ in length")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = m[i] * beta1 + c1 * gi
            vi = v[i] * beta2 + c2 * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] = p[i] - (lr * (mi * r1)) / (sqrt(vi * r2) + eps)
