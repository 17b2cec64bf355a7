# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter and pooling kernels (channels-last).

These are the memory-bound inner loops of the network; the matrix
multiplications themselves stay in BLAS via numpy on the caller side.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(cnp.ndarray[cnp.float64_t, ndim=4] x, int kh, int kw):
    """Gather all valid kh x kw patches of x [B,H,W,C] into
    [B, oh*ow, kh*kw*C], row-major over (oh, ow) and (kh, kw, C)."""
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t oh = H - kh + 1, ow = W - kw + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty(
        (B, oh * ow, kh * kw * C), dtype=np.float64)
    cdef double[:, :, :, :] xv = x
    cdef double[:, :, :] ov = out
    cdef Py_ssize_t b, i, j, di, dj, c, row, col
    with nogil:
        for b in range(B):
            for i in range(oh):
                for j in range(ow):
                    row = i * ow + j
                    col = 0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(C):
                                ov[b, row, col] = xv[b, i + di, j + dj, c]
                                col += 1
    return out


def col2im(cnp.ndarray[cnp.float64_t, ndim=3] cols, Py_ssize_t H,
           Py_ssize_t W, Py_ssize_t C, int kh, int kw):
    """Scatter-add patch gradients [B, oh*ow, kh*kw*C] back to [B,H,W,C]."""
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t oh = H - kh + 1, ow = W - kw + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros(
        (B, H, W, C), dtype=np.float64)
    cdef double[:, :, :] cv = cols
    cdef double[:, :, :, :] ov = out
    cdef Py_ssize_t b, i, j, di, dj, c, row, col
    with nogil:
        for b in range(B):
            for i in range(oh):
                for j in range(ow):
                    row = i * ow + j
                    col = 0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(C):
                                ov[b, i + di, j + dj, c] += cv[b, row, col]
                                col += 1
    return out


def maxpool2x2(cnp.ndarray[cnp.float64_t, ndim=4] x):
    """Disjoint 2x2/stride-2 max pool of x [B,H,W,C]; trailing odd row/col
    dropped. Returns (pooled [B,H//2,W//2,C], window argmax in 0..3)."""
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t oh = H // 2, ow = W // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.empty(
        (B, oh, ow, C), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=4] arg = np.empty(
        (B, oh, ow, C), dtype=np.int64)
    cdef double[:, :, :, :] xv = x
    cdef double[:, :, :, :] ov = out
    cdef long long[:, :, :, :] av = arg
    cdef Py_ssize_t b, c, i, j, k, best_k
    cdef double v, best
    with nogil:
        for b in range(B):
            for i in range(oh):
                for j in range(ow):
                    for c in range(C):
                        best = xv[b, 2 * i, 2 * j, c]
                        best_k = 0
                        for k in range(1, 4):
                            v = xv[b, 2 * i + (k >> 1), 2 * j + (k & 1), c]
                            if v > best:
                                best = v
                                best_k = k
                        ov[b, i, j, c] = best
                        av[b, i, j, c] = best_k
    return out, arg


def maxpool2x2_backward(cnp.ndarray[cnp.float64_t, ndim=4] grad_out,
                        cnp.ndarray[cnp.int64_t, ndim=4] arg,
                        Py_ssize_t H, Py_ssize_t W):
    """Route pooled gradients back through the stored window argmaxes."""
    cdef Py_ssize_t B = grad_out.shape[0], oh = grad_out.shape[1]
    cdef Py_ssize_t ow = grad_out.shape[2], C = grad_out.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros(
        (B, H, W, C), dtype=np.float64)
    cdef double[:, :, :, :] gv = grad_out
    cdef double[:, :, :, :] ov = out
    cdef long long[:, :, :, :] av = arg
    cdef Py_ssize_t b, c, i, j, k
    with nogil:
        for b in range(B):
            for i in range(oh):
                for j in range(ow):
                    for c in range(C):
                        k = av[b, i, j, c]
                        ov[b, 2 * i + (k >> 1), 2 * j + (k & 1), c] += gv[b, i, j, c]
    return out
