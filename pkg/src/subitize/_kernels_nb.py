"""numba-compiled kernels, loop-for-loop equivalents of ``_kernels_np``."""
import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xpad, H, W):
    N = xpad.shape[0]
    C = xpad.shape[3]
    out = np.empty((N * H * W, 9 * C), dtype=xpad.dtype)
    r = 0
    for n in range(N):
        for i in range(H):
            for j in range(W):
                k = 0
                for ki in range(3):
                    for kj in range(3):
                        for c in range(C):
                            out[r, k] = xpad[n, i + ki, j + kj, c]
                            k += 1
                r += 1
    return out


@njit(cache=True)
def col2im(gcols, N, H, W, C):
    out = np.zeros((N, H + 2, W + 2, C), dtype=gcols.dtype)
    # same accumulation order as the numpy path: one (ki, kj) plane at a time
    for ki in range(3):
        for kj in range(3):
            base = (ki * 3 + kj) * C
            r = 0
            for n in range(N):
                for i in range(H):
                    for j in range(W):
                        for c in range(C):
                            out[n, i + ki, j + kj, c] += gcols[r, base + c]
                        r += 1
    return out


@njit(cache=True)
def maxpool2_forward(x):
    N, H, W, C = x.shape
    out = np.empty((N, H // 2, W // 2, C), dtype=x.dtype)
    idx = np.empty((N, H // 2, W // 2, C), dtype=np.int8)
    for n in range(N):
        for i in range(H // 2):
            for j in range(W // 2):
                for c in range(C):
                    best = x[n, 2 * i, 2 * j, c]
                    b = 0
                    for k in range(1, 4):
                        val = x[n, 2 * i + k // 2, 2 * j + k % 2, c]
                        if val > best:
                            best = val
                            b = k
                    out[n, i, j, c] = best
                    idx[n, i, j, c] = b
    return out, idx


@njit(cache=True)
def maxpool2_backward(grad, idx):
    N, H2, W2, C = grad.shape
    out = np.zeros((N, 2 * H2, 2 * W2, C), dtype=grad.dtype)
    for n in range(N):
        for i in range(H2):
            for j in range(W2):
                for c in range(C):
                    k = idx[n, i, j, c]
                    out[n, 2 * i + k // 2, 2 * j + k % 2, c] = grad[n, i, j, c]
    return out


@njit(cache=True)
def affine_sample(src, mat, out_h, out_w, clamp):
    h, w, ch = src.shape
    out = np.empty((out_h, out_w, ch), dtype=np.float32)
    for i in range(out_h):
        for j in range(out_w):
            u = mat[0, 0] * j + mat[0, 1] * i + mat[0, 2]
            v = mat[1, 0] * j + mat[1, 1] * i + mat[1, 2]
            if clamp:
                u = min(max(u, 0.0), w - 1.0)
                v = min(max(v, 0.0), h - 1.0)
            fx0 = np.floor(u)
            fy0 = np.floor(v)
            fx = u - fx0
            fy = v - fy0
            x0 = int(fx0)
            y0 = int(fy0)
            for c in range(ch):
                t00 = 0.0
                t01 = 0.0
                t10 = 0.0
                t11 = 0.0
                if 0 <= y0 < h:
                    if 0 <= x0 < w:
                        t00 = src[y0, x0, c]
                    if 0 <= x0 + 1 < w:
                        t01 = src[y0, x0 + 1, c]
                if 0 <= y0 + 1 < h:
                    if 0 <= x0 < w:
                        t10 = src[y0 + 1, x0, c]
                    if 0 <= x0 + 1 < w:
                        t11 = src[y0 + 1, x0 + 1, c]
                top = t00 * (1.0 - fx) + t01 * fx
                bot = t10 * (1.0 - fx) + t11 * fx
                val = top * (1.0 - fy) + bot * fy
                out[i, j, c] = min(max(val, 0.0), 1.0)
    return out
