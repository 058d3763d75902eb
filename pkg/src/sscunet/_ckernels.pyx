# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels`` (same signatures)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, INFINITY
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm(int M, int N, int K, double* A, double* B, double* C,
                       double beta, bint trans_a, bint trans_b) noexcept nogil:
    # row-major C (M x N) = op(A) @ op(B) + beta * C, via column-major dgemm on
    # the transposed problem
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tb = b'T' if trans_a else b'N'
    cdef double one = 1.0
    cdef int lda = K if trans_b else N
    cdef int ldb = M if trans_a else K
    dgemm(&ta, &tb, &N, &M, &K, &one, B, &lda, A, &ldb, &beta, C, &N)


cdef void _im2col(const double[:, ::1] xb, Py_ssize_t K, Py_ssize_t L_out,
                  double[:, ::1] cols) noexcept nogil:
    # cols[c * K + j, l] = xb[c, l + j]
    cdef Py_ssize_t c, j, l
    for c in range(xb.shape[0]):
        for j in range(K):
            for l in range(L_out):
                cols[c * K + j, l] = xb[c, l + j]


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] kernels):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t C_out = kernels.shape[0], K = kernels.shape[2]
    cdef Py_ssize_t L_out = L - K + 1
    out_arr = np.empty((B, C_out, L_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] w = np.array(kernels, dtype=np.float64).reshape(C_out, C_in * K)
    cdef double[:, ::1] cols = np.empty((C_in * K, L_out))
    cdef Py_ssize_t b
    if B == 0 or L_out <= 0:
        return out_arr
    for b in range(B):
        _im2col(x[b], K, L_out, cols)
        _gemm(C_out, L_out, C_in * K, &w[0, 0], &cols[0, 0], &out[b, 0, 0], 0.0, False, False)
    return out_arr


def conv1d_backward(const double[:, :, ::1] grad, const double[:, :, ::1] x,
                    const double[:, :, ::1] kernels):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t C_out = kernels.shape[0], K = kernels.shape[2]
    cdef Py_ssize_t L_out = L - K + 1
    dx_arr = np.zeros((B, C_in, L), dtype=np.float64)
    dk_arr = np.zeros((C_out, C_in, K), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dk = dk_arr
    cdef double[:, ::1] w = np.array(kernels, dtype=np.float64).reshape(C_out, C_in * K)
    cdef double[:, ::1] g = np.empty((C_out, L_out))
    cdef double[:, ::1] cols = np.empty((C_in * K, L_out))
    cdef double[:, ::1] dcols = np.empty((C_in * K, L_out))
    cdef Py_ssize_t b, c, j, l, o
    if B == 0 or L_out <= 0:
        return dx_arr, dk_arr
    for b in range(B):
        for o in range(C_out):
            for l in range(L_out):
                g[o, l] = grad[b, o, l]
        _im2col(x[b], K, L_out, cols)
        # dk += g @ cols^T ; dcols = w^T @ g
        _gemm(C_out, C_in * K, L_out, &g[0, 0], &cols[0, 0], &dk[0, 0, 0], 1.0, False, True)
        _gemm(C_in * K, L_out, C_out, &w[0, 0], &g[0, 0], &dcols[0, 0], 0.0, True, False)
        for c in range(C_in):
            for j in range(K):
                for l in range(L_out):
                    dx[b, c, l + j] += dcols[c * K + j, l]
    return dx_arr, dk_arr


def maxpool1d_forward(const double[:, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t half = L // 2
    out_arr = np.empty((B, C, half), dtype=np.float64)
    idx_arr = np.empty((B, C, half), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, c, i
    cdef double a0, a1
    for b in range(B):
        for c in range(C):
            for i in range(half):
                a0 = x[b, c, 2 * i]
                a1 = x[b, c, 2 * i + 1]
                # ties resolve to the first element
                if a1 > a0:
                    out[b, c, i] = a1
                    idx[b, c, i] = 2 * i + 1
                else:
                    out[b, c, i] = a0
                    idx[b, c, i] = 2 * i
    return out_arr, idx_arr


def maxpool1d_backward(const double[:, :, ::1] grad, const cnp.int64_t[:, :, ::1] idx,
                       Py_ssize_t length):
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1], half = grad.shape[2]
    dx_arr = np.zeros((B, C, length), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, i
    for b in range(B):
        for c in range(C):
            for i in range(half):
                dx[b, c, idx[b, c, i]] += grad[b, c, i]
    return dx_arr


def slic_assign(const double[:, :, ::1] features, const double[:, ::1] centers_feat,
                const double[:, ::1] centers_pos, double S, double m,
                cnp.int64_t[:, ::1] labels, double[:, ::1] dist):
    cdef Py_ssize_t H = features.shape[0], W = features.shape[1], P = features.shape[2]
    cdef Py_ssize_t K = centers_pos.shape[0]
    cdef Py_ssize_t k, i, j, ch, r0, r1, c0, c1
    cdef double r, c, scale = (m / S) * (m / S), d_abu, diff, d2, dr, dc
    for i in range(H):
        for j in range(W):
            dist[i, j] = INFINITY
    for k in range(K):
        r = centers_pos[k, 0]
        c = centers_pos[k, 1]
        r0 = <Py_ssize_t>ceil(r - S)
        r1 = <Py_ssize_t>floor(r + S) + 1
        c0 = <Py_ssize_t>ceil(c - S)
        c1 = <Py_ssize_t>floor(c + S) + 1
        if r0 < 0:
            r0 = 0
        if c0 < 0:
            c0 = 0
        if r1 > H:
            r1 = H
        if c1 > W:
            c1 = W
        for i in range(r0, r1):
            dr = i - r
            for j in range(c0, c1):
                d_abu = 0.0
                for ch in range(P):
                    diff = features[i, j, ch] - centers_feat[k, ch]
                    d_abu += diff * diff
                dc = j - c
                d2 = d_abu * d_abu + (dr * dr + dc * dc) * scale
                if d2 < dist[i, j]:
                    dist[i, j] = d2
                    labels[i, j] = k
