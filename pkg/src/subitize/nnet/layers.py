"""Forward/backward for the layers SubitNet uses. Feature maps are NHWC.

Convolution weights are (3, 3, C_in, C_out); fully-connected weights are
(in, out). Every function is dtype-preserving.
"""
import numpy as np

from .. import kernels


class ShapeError(ValueError):
    pass


def conv2d_forward(x, w, b):
    """3x3 cross-correlation, stride 1, zero padding 1. Returns (y, cols)."""
    if x.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3] or b.shape != (w.shape[3],):
        raise ShapeError(f"conv shapes disagree: x{x.shape} w{w.shape} b{b.shape}")
    N, H, W, C = x.shape
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = kernels.im2col(xpad, H, W)
    y = cols @ w.reshape(9 * C, -1) + b
    return y.reshape(N, H, W, -1), cols


def conv2d_backward(x, w, grad_out, cols=None, need_input_grad=True):
    """Returns (grad_input or None, grad_weights, grad_bias)."""
    N, H, W, C = x.shape
    F = w.shape[3]
    if grad_out.shape != (N, H, W, F) or w.shape[2] != C:
        raise ShapeError(f"conv backward shapes disagree: x{x.shape} w{w.shape} g{grad_out.shape}")
    if cols is None:
        cols = kernels.im2col(np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0))), H, W)
    g2 = grad_out.reshape(-1, F)
    gw = (cols.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gx = None
    if need_input_grad:
        gcols = g2 @ w.reshape(9 * C, F).T
        gx = kernels.col2im(gcols, N, H, W, C)[:, 1:-1, 1:-1, :]
        gx = np.ascontiguousarray(gx)
    return gx, gw, gb


def maxpool2_forward(x):
    """2x2 max pool, stride 2. Returns (out, argmax within each window, row-major, first wins)."""
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool needs even spatial dims, got {x.shape[1:3]}")
    return kernels.maxpool2_forward(x)


def maxpool2_backward(grad, idx):
    if grad.shape != idx.shape:
        raise ShapeError("maxpool grad/argmax shapes disagree")
    return kernels.maxpool2_backward(grad, idx)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad):
    # derivative at exactly 0 is taken as 0
    return grad * (x > 0)


def global_avg_pool_forward(x):
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(grad, shape):
    N, H, W, C = shape
    if grad.shape != (N, C):
        raise ShapeError("global pool grad shape disagrees")
    g = (grad / (H * W)).astype(grad.dtype)
    return np.ascontiguousarray(np.broadcast_to(g[:, None, None, :], shape))


def fc_forward(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"fc shapes disagree: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w + b


def fc_backward(x, w, grad):
    if grad.shape != (x.shape[0], w.shape[1]):
        raise ShapeError("fc grad shape disagrees")
    return grad @ w.T, x.T @ grad, grad.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean softmax loss over the batch. Returns (loss, grad_logits, probs)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ShapeError("labels must be one valid class per row")
    # the loss head runs in float64 whatever the network dtype
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    loss = float(-logp[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(logits.dtype), probs
