"""Pure-numpy kernels. Reference path, and the fallback when numba is disabled."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xpad, H, W):
    # xpad: (N, H+2, W+2, C) -> (N*H*W, 9*C), column order (ki, kj, c)
    N, _, _, C = xpad.shape
    win = sliding_window_view(xpad, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * H * W, 9 * C)


def col2im(gcols, N, H, W, C):
    g = gcols.reshape(N, H, W, 3, 3, C)
    out = np.zeros((N, H + 2, W + 2, C), dtype=gcols.dtype)
    for ki in range(3):
        for kj in range(3):
            out[:, ki:ki + H, kj:kj + W, :] += g[:, :, :, ki, kj, :]
    return out


def maxpool2_forward(x):
    N, H, W, C = x.shape
    win = x.reshape(N, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(N, H // 2, W // 2, C, 4)
    idx = np.argmax(win, axis=-1).astype(np.int8)  # argmax returns the first maximum
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(grad, idx):
    N, H2, W2, C = grad.shape
    hot = (np.arange(4, dtype=np.int8) == idx[..., None]) * grad[..., None]
    g = hot.reshape(N, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(g.reshape(N, 2 * H2, 2 * W2, C)).astype(grad.dtype, copy=False)


def affine_sample(src, mat, out_h, out_w, clamp):
    """Bilinear resampling through an inverse affine map.

    ``mat`` is 2x3 and maps output pixel indices (col, row, 1) to continuous
    source indices (u, v), where integer values hit pixel centres. With
    ``clamp`` out-of-range taps replicate the edge, otherwise they read zero.
    """
    h, w, ch = src.shape
    rows = np.arange(out_h, dtype=np.float64)[:, None]
    cols = np.arange(out_w, dtype=np.float64)[None, :]
    u = mat[0, 0] * cols + mat[0, 1] * rows + mat[0, 2]
    v = mat[1, 0] * cols + mat[1, 1] * rows + mat[1, 2]
    if clamp:
        u = np.clip(u, 0.0, w - 1.0)
        v = np.clip(v, 0.0, h - 1.0)
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)].astype(np.float64)
        return np.where(ok[..., None], vals, 0.0)

    top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx
    out = top * (1.0 - fy) + bot * fy
    return np.clip(out, 0.0, 1.0).astype(np.float32)
