# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (see numpy_ref for the reference contracts).

Plain C loops ordered so the innermost dimension is contiguous; no threading,
so results are deterministic. float32 and float64 supported via fused types.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


def _check_odd(int k):
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    if w.shape[1] != C:
        raise ValueError(
            f"channel mismatch: input {tuple(np.asarray(x).shape)} vs weight "
            f"{tuple(np.asarray(w).shape)}")
    _check_odd(KH)
    _check_odd(KW)
    xp_arr = np.pad(np.asarray(x), ((0, 0), (0, 0), (KH // 2, KH // 2), (KW // 2, KW // 2)))
    y_arr = np.zeros((B, O, H, W), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] xp = xp_arr
    cdef real[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t b, o, c, di, dj, i, j
    cdef real wv
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for di in range(KH):
                    for dj in range(KW):
                        wv = w[o, c, di, dj]
                        for i in range(H):
                            for j in range(W):
                                y[b, o, i, j] += wv * xp[b, c, i + di, j + dj]
    return y_arr


def conv2d_backward_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w):
    wt = np.ascontiguousarray(np.asarray(w)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(gy, wt)


def conv2d_backward_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] gy,
                           int kh, int kw):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1]
    _check_odd(kh)
    _check_odd(kw)
    xp_arr = np.pad(np.asarray(x), ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    gw_arr = np.zeros((O, C, kh, kw), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] xp = xp_arr
    cdef real[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, c, di, dj, i, j
    cdef real acc
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for di in range(kh):
                    for dj in range(kw):
                        acc = 0
                        for i in range(H):
                            for j in range(W):
                                acc += gy[b, o, i, j] * xp[b, c, i + di, j + dj]
                        gw[o, c, di, dj] += acc
    return gw_arr


def dwconv1d_forward(real[:, :, ::1] x, real[:, ::1] w):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t K = w.shape[1]
    if w.shape[0] != C:
        raise ValueError(
            f"channel mismatch: input {tuple(np.asarray(x).shape)} vs weight "
            f"{tuple(np.asarray(w).shape)}")
    _check_odd(K)
    xp_arr = np.pad(np.asarray(x), ((0, 0), (K // 2, K // 2), (0, 0)))
    y_arr = np.zeros((B, T, C), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] xp = xp_arr
    cdef real[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, t, c, k
    for b in range(B):
        for k in range(K):
            for t in range(T):
                for c in range(C):
                    y[b, t, c] += xp[b, t + k, c] * w[c, k]
    return y_arr


def dwconv1d_backward_input(real[:, :, ::1] gy, real[:, ::1] w):
    wf = np.ascontiguousarray(np.asarray(w)[:, ::-1])
    return dwconv1d_forward(gy, wf)


def dwconv1d_backward_weight(real[:, :, ::1] x, real[:, :, ::1] gy, int k):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], C = x.shape[2]
    _check_odd(k)
    xp_arr = np.pad(np.asarray(x), ((0, 0), (k // 2, k // 2), (0, 0)))
    gw_arr = np.zeros((C, k), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] xp = xp_arr
    cdef real[:, ::1] gw = gw_arr
    cdef Py_ssize_t b, t, c, kk
    for b in range(B):
        for kk in range(k):
            for t in range(T):
                for c in range(C):
                    gw[c, kk] += gy[b, t, c] * xp[b, t + kk, c]
    return gw_arr
