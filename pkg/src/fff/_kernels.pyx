# cython: language_level=3
"""Compiled kernels: batched LU for small dense matrices and fused activations.

Same call signatures as :mod:`fff._pure`. Each batch entry is factored in a
tight C loop, which is where the numpy version loses to Python overhead when
the matrices are small (D <= 16) and the batch is large.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, log, exp, expm1

cnp.import_array()

cdef double PIVOT_EPS = 1e-300


cdef Py_ssize_t _lu(double[:, ::1] a, Py_ssize_t[::1] perm, double *logdet) noexcept nogil:
    """In-place LU with partial pivoting. Returns -1 or the failing column."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k, p
    cdef double best, val, tmp, piv, f
    logdet[0] = 0.0
    for i in range(n):
        perm[i] = i
    for k in range(n):
        p = k
        best = fabs(a[k, k])
        for i in range(k + 1, n):
            val = fabs(a[i, k])
            if val > best:
                best = val
                p = i
        if best < PIVOT_EPS:
            return k
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            j = perm[k]
            perm[k] = perm[p]
            perm[p] = j
        piv = a[k, k]
        logdet[0] += log(fabs(piv))
        for i in range(k + 1, n):
            f = a[i, k] / piv
            a[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= f * a[k, j]
    return -1


def batched_logabsdet(a):
    """log|det| of each matrix in a (B, n, n) stack.

    Returns ``(logdet, bad)`` where ``bad`` is the index of the first singular
    matrix or -1.
    """
    cdef double[:, :, ::1] work = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t nb = work.shape[0], n = work.shape[1]
    out_arr = np.zeros(nb, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t[::1] perm = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t b, bad = -1
    cdef double ld
    with nogil:
        for b in range(nb):
            if _lu(work[b], perm, &ld) >= 0:
                bad = b
                break
            out[b] = ld
    return out_arr, int(bad)


def batched_solve(a, rhs):
    """Solve a[b] @ x[b] = rhs[b] for a (B, n, n) stack and (B, n, m) right-hand sides."""
    cdef double[:, :, ::1] work = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] r = np.array(rhs, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t nb = work.shape[0], n = work.shape[1], m = r.shape[2]
    out_arr = np.zeros((nb, n, m), dtype=np.float64)
    cdef double[:, :, ::1] x = out_arr
    cdef Py_ssize_t[::1] perm = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t b, i, j, c, bad = -1
    cdef double ld, s
    with nogil:
        for b in range(nb):
            if _lu(work[b], perm, &ld) >= 0:
                bad = b
                break
            for c in range(m):
                # forward substitution on the permuted rhs (unit lower)
                for i in range(n):
                    s = r[b, perm[i], c]
                    for j in range(i):
                        s -= work[b, i, j] * x[b, j, c]
                    x[b, i, c] = s
                for i in range(n - 1, -1, -1):
                    s = x[b, i, c]
                    for j in range(i + 1, n):
                        s -= work[b, i, j] * x[b, j, c]
                    x[b, i, c] = s / work[b, i, i]
    return out_arr, int(bad)


def activation_derivs(p, int kind):
    """Value, first and second derivative of the activation, fused.

    kind 0 = tanh, 1 = silu. ``p`` must be 2-D.
    """
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t nr = pv.shape[0], nc = pv.shape[1]
    s_arr = np.empty((nr, nc), dtype=np.float64)
    d1_arr = np.empty((nr, nc), dtype=np.float64)
    d2_arr = np.empty((nr, nc), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef double[:, ::1] d1 = d1_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef Py_ssize_t i, j
    cdef double x, t, sg, e
    with nogil:
        if kind == 0:
            for i in range(nr):
                for j in range(nc):
                    # expm1 form: libm tanh is several times slower, same accuracy
                    x = pv[i, j]
                    if x > 20.0:
                        t = 1.0
                    elif x < -20.0:
                        t = -1.0
                    else:
                        e = expm1(2.0 * x)
                        t = e / (e + 2.0)
                    s[i, j] = t
                    d1[i, j] = 1.0 - t * t
                    d2[i, j] = -2.0 * t * (1.0 - t * t)
        else:
            for i in range(nr):
                for j in range(nc):
                    x = pv[i, j]
                    if x >= 0:
                        sg = 1.0 / (1.0 + exp(-x))
                    else:
                        e = exp(x)
                        sg = e / (1.0 + e)
                    s[i, j] = x * sg
                    d1[i, j] = sg * (1.0 + x * (1.0 - sg))
                    d2[i, j] = sg * (1.0 - sg) * (2.0 + x * (1.0 - 2.0 * sg))
    return s_arr, d1_arr, d2_arr
