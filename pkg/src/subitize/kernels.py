"""Hot-loop kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly, unless the environment
variable ``SUBITIZE_NO_NUMBA`` is set to a non-empty value other than ``0``.
Both paths are importable directly (``numpy_kernels``, ``numba_kernels``) so
tests and benchmarks can compare them.

Array conventions: feature maps are NHWC float32; images are HWC float32.
"""
import logging
import os

import numpy as np

from . import _kernels_np as numpy_kernels

log = logging.getLogger(__name__)

_disabled = os.environ.get("SUBITIZE_NO_NUMBA", "") not in ("", "0")

numba_kernels = None
if not _disabled:
    try:
        from . import _kernels_nb as numba_kernels
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, using numpy kernels")

BACKEND = "numba" if numba_kernels is not None else "numpy"
_impl = numba_kernels if numba_kernels is not None else numpy_kernels


def im2col(xpad, H, W):
    # a pure copy; numpy's strided transpose beats the compiled loop here (see benchmarks/)
    return numpy_kernels.im2col(np.ascontiguousarray(xpad), H, W)


def col2im(gcols, N, H, W, C):
    return _impl.col2im(np.ascontiguousarray(gcols), N, H, W, C)


def maxpool2_forward(x):
    return _impl.maxpool2_forward(np.ascontiguousarray(x))


def maxpool2_backward(grad, idx):
    return _impl.maxpool2_backward(np.ascontiguousarray(grad), np.ascontiguousarray(idx))


def affine_sample(src, mat, out_h, out_w, clamp=False):
    src = np.ascontiguousarray(src, dtype=np.float32)
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    return _impl.affine_sample(src, mat, int(out_h), int(out_w), bool(clamp))
