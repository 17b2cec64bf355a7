"""Pure-numpy implementations of the channels-last patch and pooling
kernels.

Used when the compiled extension is unavailable; must stay numerically
identical to it (same element ordering, float64 throughout).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw):
    B, H, W, C = x.shape
    oh, ow = H - kh + 1, W - kw + 1
    # windows: [B, oh, ow, C, kh, kw] -> per-patch order (kh, kw, C)
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(B, oh * ow, kh * kw * C)
    return np.ascontiguousarray(cols)


def col2im(cols, H, W, C, kh, kw):
    B = cols.shape[0]
    oh, ow = H - kh + 1, W - kw + 1
    out = np.zeros((B, H, W, C), dtype=np.float64)
    patches = cols.reshape(B, oh, ow, kh, kw, C)
    for di in range(kh):
        for dj in range(kw):
            out[:, di:di + oh, dj:dj + ow, :] += patches[:, :, :, di, dj, :]
    return out


def maxpool2x2(x):
    B, H, W, C = x.shape
    oh, ow = H // 2, W // 2
    cropped = x[:, :2 * oh, :2 * ow, :]
    windows = cropped.reshape(B, oh, 2, ow, 2, C).transpose(0, 1, 3, 2, 4, 5)
    flat = windows.reshape(B, oh, ow, 4, C)
    arg = flat.argmax(axis=3)
    out = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool2x2_backward(grad_out, arg, H, W):
    B, oh, ow, C = grad_out.shape
    out = np.zeros((B, H, W, C), dtype=np.float64)
    windows = np.zeros((B, oh, ow, 4, C), dtype=np.float64)
    np.put_along_axis(windows, arg[:, :, :, None, :], grad_out[:, :, :, None, :],
                      axis=3)
    blocks = windows.reshape(B, oh, ow, 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    out[:, :2 * oh, :2 * ow, :] = blocks.reshape(B, 2 * oh, 2 * ow, C)
    return out
