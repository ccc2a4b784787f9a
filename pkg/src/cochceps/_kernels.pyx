# cython: language_level=3
"""Compiled versions of the hot kernels in ``_kernels_py``.

Matrix products go through BLAS ``dgemm``; the element-wise passes are C loops.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, exp, log, sqrt, M_PI, INFINITY
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef dict _LIFT_TABLES = {}


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double alpha) noexcept nogil:
    """``c = alpha * a @ b.T`` for C-contiguous operands."""
    cdef char ta = b'T', tb = b'N'
    cdef int m = b.shape[0], n = a.shape[0], k = a.shape[1]
    cdef double beta = 0.0
    if m == 0 or n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &c[0, 0], &m)


cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double alpha) noexcept nogil:
    """``c = alpha * a @ b`` for C-contiguous operands."""
    cdef char ta = b'N', tb = b'N'
    cdef int m = b.shape[1], n = a.shape[0], k = a.shape[1]
    cdef double beta = 0.0
    if m == 0 or n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, &b[0, 0], &m, &a[0, 0], &k, &beta, &c[0, 0], &m)


def _lift_table(Py_ssize_t n_in, Py_ssize_t n_out):
    key = (n_in, n_out)
    table = _LIFT_TABLES.get(key)
    if table is not None:
        return table
    table = np.empty((n_out, n_in), dtype=np.float64)
    cdef double[:, ::1] tv = table
    cdef double norm = sqrt(2.0 / n_in)
    cdef Py_ssize_t m, k
    for m in range(n_out):
        for k in range(n_in):
            tv[m, k] = norm * cos((M_PI * (k + 1) / n_in) * ((m + 1) - 0.5))
    _LIFT_TABLES[key] = table  # private, never handed out
    return table


def lift_rows(x, Py_ssize_t n_out):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] table = _lift_table(xv.shape[1], n_out)
    out = np.empty((xv.shape[0], n_out), dtype=np.float64)
    if xv.shape[0]:
        _gemm_nt(xv, table, out, 1.0)
    return out


def mode_energies(power, gains_sq, scale):
    cdef double[:, ::1] pv = np.ascontiguousarray(power, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gains_sq, dtype=np.float64)
    cdef double[::1] sv = np.ascontiguousarray(scale, dtype=np.float64)
    cdef Py_ssize_t n_frames = pv.shape[0], n_angles = gv.shape[0]
    cdef Py_ssize_t a, t
    if gv.shape[1] != pv.shape[1]:
        raise ValueError("bin count mismatch")
    out = np.empty((n_angles, n_frames), dtype=np.float64)
    cdef double[:, ::1] ov = out
    _gemm_nt(gv, pv, ov, 1.0)
    for a in range(n_angles):
        for t in range(n_frames):
            ov[a, t] *= sv[a]
    return out


def nt_xent(z, partner, double tau):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t[::1] pv = np.ascontiguousarray(partner, dtype=np.intp)
    cdef Py_ssize_t n2 = zv.shape[0], d = zv.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double acc, smax, denom, loss = 0.0, radial, e
    u_arr = np.empty((n2, d), dtype=np.float64)
    norms_arr = np.empty(n2, dtype=np.float64)
    s_arr = np.empty((n2, n2), dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    cdef double[::1] norms = norms_arr
    cdef double[:, ::1] s = s_arr

    for i in range(n2):
        acc = 0.0
        for c in range(d):
            acc += zv[i, c] * zv[i, c]
        if acc == 0.0:
            raise ValueError("zero-norm embedding")
        norms[i] = sqrt(acc)
        for c in range(d):
            u[i, c] = zv[i, c] / norms[i]

    _gemm_nt(u, u, s, 1.0 / tau)

    # one pass per anchor: log-sum-exp for the loss, softmax into s for dL/dS
    for i in range(n2):
        smax = -INFINITY
        for k in range(n2):
            if k != i and s[i, k] > smax:
                smax = s[i, k]
        loss -= s[i, pv[i]]
        s[i, i] = 0.0
        denom = 0.0
        for k in range(n2):
            if k != i:
                e = exp(s[i, k] - smax)
                s[i, k] = e
                denom += e
        loss += smax + log(denom)
        denom *= n2
        for k in range(n2):
            s[i, k] /= denom
        s[i, pv[i]] -= 1.0 / n2
    loss /= n2

    # symmetrise in place: (g + g.T) / tau
    for i in range(n2):
        for k in range(i, n2):
            e = (s[i, k] + s[k, i]) / tau
            s[i, k] = e
            s[k, i] = e

    dz_arr = np.empty((n2, d), dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    _gemm_nn(s, u, dz, 1.0)
    for i in range(n2):
        radial = 0.0
        for c in range(d):
            radial += dz[i, c] * u[i, c]
        for c in range(d):
            dz[i, c] = (dz[i, c] - u[i, c] * radial) / norms[i]
    return loss, dz_arr


def resize_nearest(img, Py_ssize_t rows, Py_ssize_t cols):
    cdef double[:, ::1] iv = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t a = iv.shape[0], m = iv.shape[1]
    cdef Py_ssize_t r, c, sr
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t[::1] ci = np.empty(cols, dtype=np.intp)
    for c in range(cols):
        ci[c] = (c * m) // cols
    for r in range(rows):
        sr = (r * a) // rows
        for c in range(cols):
            ov[r, c] = iv[sr, ci[c]]
    return out
