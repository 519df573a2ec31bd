"""Pure-numpy reference kernels for the convolution hot paths.

Same contracts as the compiled extension in ``_ckern``; the backend is picked
in ``ssld._kernels``. All kernels use stride-1 "same" padding and odd kernel
sizes. Layouts: 2-d convs are (batch, channel, height, width); depthwise 1-d
convs are (batch, time, channel) with one filter row per channel.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check_odd(k):
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")


def conv2d_forward(x, w):
    """Correlate x (B,C,H,W) with w (O,C,kh,kw), stride 1, same padding."""
    b, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c2 != c:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    _check_odd(kh)
    _check_odd(kw)
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    y = np.empty((b, o, h, wd), dtype=x.dtype)
    for i in range(b):
        win = sliding_window_view(xp[i], (kh, kw), axis=(1, 2))  # (C,H,W,kh,kw)
        y[i] = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    return y


def conv2d_backward_input(gy, w):
    """Gradient w.r.t. the conv2d input: correlate gy with the flipped,
    in/out-transposed kernel."""
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C,O,kh,kw)
    return conv2d_forward(gy, np.ascontiguousarray(wt))


def conv2d_backward_weight(x, gy, kh, kw):
    """Gradient w.r.t. the conv2d weight, shape (O,C,kh,kw).

    One GEMM per kernel offset keeps the working copies small compared to a
    full im2col of the input."""
    b, c, h, wd = x.shape
    o = gy.shape[1]
    _check_odd(kh)
    _check_odd(kw)
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    gy_flat = gy.reshape(b, o, h * wd)
    gw = np.empty((o, c, kh, kw), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            shift = np.ascontiguousarray(
                xp[:, :, di:di + h, dj:dj + wd]).reshape(b, c, h * wd)
            # sum over batch and positions: (O,C)
            gw[:, :, di, dj] = np.einsum("bon,bcn->oc", gy_flat, shift,
                                         optimize=True)
    return gw


def dwconv1d_forward(x, w):
    """Depthwise 1-d correlation along time: x (B,T,C), w (C,K), same pad."""
    b, t, c = x.shape
    c2, k = w.shape
    if c2 != c:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    _check_odd(k)
    xp = np.pad(x, ((0, 0), (k // 2, k // 2), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)  # (B,T,C,K)
    return np.einsum("btck,ck->btc", win, w)


def dwconv1d_backward_input(gy, w):
    """Gradient w.r.t. the depthwise conv input."""
    return dwconv1d_forward(gy, np.ascontiguousarray(w[:, ::-1]))


def dwconv1d_backward_weight(x, gy, k):
    """Gradient w.r.t. the depthwise conv weight, shape (C,K)."""
    _check_odd(k)
    xp = np.pad(x, ((0, 0), (k // 2, k // 2), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)  # (B,T,C,K)
    return np.einsum("btck,btc->ck", win, gy)
