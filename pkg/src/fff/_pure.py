"""Numpy implementations of the hot kernels.

Used when the compiled extension is missing or ``FFF_BACKEND=python`` is set.
The LU loops over columns and vectorizes over the batch, so results match the
compiled kernels to rounding but are not guaranteed bitwise identical.
"""
import numpy as np

PIVOT_EPS = 1e-300


def _lu_batch(a):
    """Batched in-place LU with partial pivoting.

    Returns ``(lu, perm, logdet, bad)``; ``bad`` is -1 or the first singular index.
    """
    nb, n, _ = a.shape
    rows = np.arange(nb)
    perm = np.tile(np.arange(n), (nb, 1))
    logdet = np.zeros(nb)
    for k in range(n):
        piv_row = k + np.argmax(np.abs(a[:, k:, k]), axis=1)
        best = np.abs(a[rows, piv_row, k])
        bad = best < PIVOT_EPS
        if bad.any():
            return a, perm, logdet, int(np.flatnonzero(bad)[0])
        swap = piv_row != k
        if swap.any():
            idx = rows[swap]
            pr = piv_row[swap]
            tmp = a[idx, k, :].copy()
            a[idx, k, :] = a[idx, pr, :]
            a[idx, pr, :] = tmp
            tp = perm[idx, k].copy()
            perm[idx, k] = perm[idx, pr]
            perm[idx, pr] = tp
        piv = a[:, k, k]
        logdet += np.log(np.abs(piv))
        f = a[:, k + 1:, k] / piv[:, None]
        a[:, k + 1:, k] = f
        a[:, k + 1:, k + 1:] -= f[:, :, None] * a[:, k, None, k + 1:]
    return a, perm, logdet, -1


def batched_logabsdet(a):
    work = np.array(a, dtype=np.float64, copy=True)
    _, _, logdet, bad = _lu_batch(work)
    return logdet, bad


def batched_solve(a, rhs):
    work = np.array(a, dtype=np.float64, copy=True)
    r = np.asarray(rhs, dtype=np.float64)
    nb, n, _ = work.shape
    lu, perm, _, bad = _lu_batch(work)
    out = np.zeros((nb, n, r.shape[2]))
    if bad >= 0:
        return out, bad
    x = np.take_along_axis(r, perm[:, :, None], axis=1)
    for i in range(n):
        x[:, i] -= np.einsum("bj,bjc->bc", lu[:, i, :i], x[:, :i])
    for i in range(n - 1, -1, -1):
        x[:, i] -= np.einsum("bj,bjc->bc", lu[:, i, i + 1:], x[:, i + 1:])
        x[:, i] /= lu[:, i, i, None]
    return x, -1


def activation_derivs(p, kind):
    p = np.asarray(p, dtype=np.float64)
    if kind == 0:
        t = np.tanh(p)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    # overflow-safe logistic
    e = np.exp(-np.abs(p))
    sg = np.where(p >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return p * sg, sg * (1.0 + p * (1.0 - sg)), sg * (1.0 - sg) * (2.0 + p * (1.0 - 2.0 * sg))
