"""Pure-numpy kernel lane.

These functions mirror the compiled twins in ``mgrdenoise._kernels`` and must
stay numerically identical to them (same accumulation order in col2im, same
tie-breaking in maxpool), so either lane can back the engine interchangeably.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "numpy"


def im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather k-by-k windows of a padded (n,c,hp,wp) array into (n, c*k*k, oh*ow)."""
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    windows = as_strided(
        xp,
        shape=(n, c, k, k, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return windows.reshape(n, c * k * k, oh * ow)


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int,
           k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add columns back into a padded (n,c,hp,wp) array (im2col adjoint)."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols6[:, :, ki, kj]
    return out


def maxpool2_forward(x: np.ndarray):
    """2x2 non-overlapping max pool; returns (pooled, window argmax in 0..3)."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)  # argmax takes the first max: ties go low
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(grad: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    n, c, oh, ow = grad.shape
    out = np.zeros((n, c, oh, ow, 4), dtype=grad.dtype)
    np.put_along_axis(out, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    out = out.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(out.reshape(n, c, h, w))


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block."""
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def upsample2_backward(grad: np.ndarray) -> np.ndarray:
    """Adjoint of nearest 2x upsampling: sum each 2x2 block of child gradients."""
    n, c, h2, w2 = grad.shape
    return np.ascontiguousarray(grad.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))
