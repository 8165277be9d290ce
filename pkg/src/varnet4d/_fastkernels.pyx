# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: im2col in C plus BLAS dgemm.

Same contracts as _kernels_np (float64, odd kernels, implicit K//2
padding, circular or zero). Selected automatically by varnet4d.backend
when the extension is importable.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "compiled"


cdef void _pad_into(double[:, :, :, ::1] x, double[:, :, :, ::1] xp,
                    int p, bint circular) noexcept:
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, i, j, ii, jj
    for b in range(B):
        for c in range(C):
            for i in range(H + 2 * p):
                ii = i - p
                if circular:
                    ii = (ii % H + H) % H
                for j in range(W + 2 * p):
                    jj = j - p
                    if circular:
                        jj = (jj % W + W) % W
                    if 0 <= ii < H and 0 <= jj < W:
                        xp[b, c, i, j] = x[b, c, ii, jj]
                    else:
                        xp[b, c, i, j] = 0.0


cdef void _im2col_b(double[:, :, :, ::1] xp, Py_ssize_t b, double[:, ::1] col,
                    int K, int stride, Py_ssize_t Ho, Py_ssize_t Wo) noexcept:
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t c, u, v, i, j, row
    for c in range(C):
        for u in range(K):
            for v in range(K):
                row = (c * K + u) * K + v
                for i in range(Ho):
                    for j in range(Wo):
                        col[row, i * Wo + j] = xp[b, c, i * stride + u, j * stride + v]


cdef void _gemm_rm(char ta, char tb, int m, int n, int k,
                   double alpha, double* a, int lda, double* b_, int ldb,
                   double beta, double* c, int ldc) noexcept:
    # Row-major C(m,n) = op(A)op(B): swap operands for Fortran dgemm.
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b_, &ldb, a, &lda, &beta, c, &ldc)


def conv2d_fwd(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=4] w,
               int stride, bint circular):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t C_out = w.shape[0]
    cdef int K = <int> w.shape[2]
    cdef int p = K // 2
    cdef Py_ssize_t Ho = (H + 2 * p - K) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * p - K) // stride + 1
    cdef Py_ssize_t ckk = C_in * K * K

    xp_arr = np.empty((B, C_in, H + 2 * p, W + 2 * p))
    col_arr = np.empty((ckk, Ho * Wo))
    y_arr = np.empty((B, C_out, Ho, Wo))
    cdef double[:, :, :, ::1] xv = x, xp = xp_arr, yv = y_arr
    cdef double[:, ::1] col = col_arr
    cdef double[:, :, :, ::1] wv = w
    cdef Py_ssize_t b

    _pad_into(xv, xp, p, circular)
    for b in range(B):
        _im2col_b(xp, b, col, K, stride, Ho, Wo)
        # y_b (C_out, Ho*Wo) = wmat (C_out, ckk) @ col (ckk, Ho*Wo)
        _gemm_rm(b'N', b'N', <int> C_out, <int> (Ho * Wo), <int> ckk,
                 1.0, &wv[0, 0, 0, 0], <int> ckk, &col[0, 0], <int> (Ho * Wo),
                 0.0, &yv[b, 0, 0, 0], <int> (Ho * Wo))
    return y_arr


def conv2d_igrad(cnp.ndarray[double, ndim=4] g, cnp.ndarray[double, ndim=4] w,
                 int H, int W, int stride, bint circular):
    cdef Py_ssize_t B = g.shape[0], C_out = g.shape[1]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t C_in = w.shape[1]
    cdef int K = <int> w.shape[2]
    cdef int p = K // 2
    cdef Py_ssize_t ckk = C_in * K * K

    col_arr = np.empty((ckk, Ho * Wo))
    gxp_arr = np.zeros((B, C_in, H + 2 * p, W + 2 * p))
    gx_arr = np.empty((B, C_in, H, W))
    cdef double[:, :, :, ::1] gv = g, wv = w, gxp = gxp_arr, gx = gx_arr
    cdef double[:, ::1] col = col_arr
    cdef Py_ssize_t b, c, u, v, i, j, row, ii, jj

    for b in range(B):
        # col (ckk, Ho*Wo) = wmat^T (ckk, C_out) @ g_b (C_out, Ho*Wo)
        _gemm_rm(b'T', b'N', <int> ckk, <int> (Ho * Wo), <int> C_out,
                 1.0, &wv[0, 0, 0, 0], <int> ckk, &gv[b, 0, 0, 0], <int> (Ho * Wo),
                 0.0, &col[0, 0], <int> (Ho * Wo))
        for c in range(C_in):
            for u in range(K):
                for v in range(K):
                    row = (c * K + u) * K + v
                    for i in range(Ho):
                        for j in range(Wo):
                            gxp[b, c, i * stride + u, j * stride + v] += col[row, i * Wo + j]

    # adjoint of padding: crop, folding wrapped borders back for circular
    gx_arr[...] = 0.0
    for b in range(B):
        for c in range(C_in):
            for i in range(H + 2 * p):
                ii = i - p
                if circular:
                    ii = (ii % H + H) % H
                elif ii < 0 or ii >= H:
                    continue
                for j in range(W + 2 * p):
                    jj = j - p
                    if circular:
                        jj = (jj % W + W) % W
                    elif jj < 0 or jj >= W:
                        continue
                    gx[b, c, ii, jj] += gxp[b, c, i, j]
    return gx_arr


def conv2d_wgrad(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=4] g,
                 int K, int stride, bint circular):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t C_out = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef int p = K // 2
    cdef Py_ssize_t ckk = C_in * K * K

    xp_arr = np.empty((B, C_in, H + 2 * p, W + 2 * p))
    col_arr = np.empty((ckk, Ho * Wo))
    gw_arr = np.zeros((C_out, C_in, K, K))
    cdef double[:, :, :, ::1] xv = x, xp = xp_arr, gv = g, gw = gw_arr
    cdef double[:, ::1] col = col_arr
    cdef Py_ssize_t b

    _pad_into(xv, xp, p, circular)
    for b in range(B):
        _im2col_b(xp, b, col, K, stride, Ho, Wo)
        # gw (C_out, ckk) += g_b (C_out, Ho*Wo) @ col^T (Ho*Wo, ckk)
        _gemm_rm(b'N', b'T', <int> C_out, <int> ckk, <int> (Ho * Wo),
                 1.0, &gv[b, 0, 0, 0], <int> (Ho * Wo), &col[0, 0], <int> (Ho * Wo),
                 1.0, &gw[0, 0, 0, 0], <int> ckk)
    return gw_arr
