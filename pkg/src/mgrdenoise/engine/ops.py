"""Rank-4 tensor operations with explicit forward/backward pairs.

Everything operates on (n, c, h, w) row-major numpy arrays and preserves the
input dtype (float32 for training, float64 for gradient checking). Backward
functions compute gradients of a scalar loss under the chain rule; there is no
autograd tape, callers wire the passes by hand.
"""

import numpy as np

from .backend import kernels as K


class NonFiniteError(FloatingPointError):
    """A tensor that must be finite contains NaN or Inf."""


def assert_finite(x, what: str = "tensor") -> None:
    """Raise NonFiniteError if x contains NaN or Inf."""
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(x_shape, w_shape, stride, padding):
    n, c_in, h, w = x_shape
    c_out, c_in_w, kh, kw = w_shape
    if kh != kw:
        raise ValueError(f"only square kernels supported, got {kh}x{kw}")
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels but weights expect {c_in_w}")
    k = kh
    if padding is None:
        padding = k // 2
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"kernel {k} with padding {padding} does not fit input {h}x{w}")
    return k, padding, oh, ow


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: np.ndarray, w: np.ndarray, b=None, stride: int = 1, padding=None,
           return_cols: bool = False):
    """2-D cross-correlation with zero padding (default padding keeps "same" size).

    Returns the output, or (output, cols) when return_cols is set so callers
    can hand the im2col buffer back to conv2d_backward instead of recomputing.
    """
    n, c_in, _, _ = x.shape
    c_out = w.shape[0]
    k, padding, oh, ow = _conv_geometry(x.shape, w.shape, stride, padding)
    cols = K.im2col(_pad(x, padding), k, stride, oh, ow)
    y = np.matmul(w.reshape(c_out, -1), cols)
    if b is not None:
        y += b[:, None]
    y = y.reshape(n, c_out, oh, ow)
    return (y, cols) if return_cols else y


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray,
                    stride: int = 1, padding=None, cols=None,
                    need_input_grad: bool = True):
    """Gradients of conv2d w.r.t. (input, weights, bias).

    `x` must be the tensor the forward saw; `cols` is its optional cached
    im2col buffer. grad_bias is returned unconditionally (callers that ran a
    bias-free forward simply ignore it).
    """
    n, c_in, h, w_in = x.shape
    c_out = w.shape[0]
    k, padding, oh, ow = _conv_geometry(x.shape, w.shape, stride, padding)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output "
                         f"{(n, c_out, oh, ow)}")
    if cols is None:
        cols = K.im2col(_pad(x, padding), k, stride, oh, ow)
    g = np.ascontiguousarray(grad_out.reshape(n, c_out, oh * ow))
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, grad_w, grad_b
    gcols = np.matmul(w.reshape(c_out, -1).T, g)
    gcols = np.ascontiguousarray(gcols)
    hp, wp = h + 2 * padding, w_in + 2 * padding
    gxp = K.col2im(gcols, n, c_in, hp, wp, k, stride, oh, ow)
    if padding:
        gxp = np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + w_in])
    return gxp, grad_w, grad_b


# ---------------------------------------------------------------------------
# elementwise ops (forward + backward helpers)
# ---------------------------------------------------------------------------

def sigmoid(x):
    # exp underflow/overflow saturates to the correct limit values
    with np.errstate(over="ignore", under="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid_backward(grad, y):
    """Backward from the forward output y = sigmoid(x)."""
    return grad * y * (1.0 - y)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad, x):
    return grad * (x > 0)


def leaky_relu(x, slope: float = 0.1):
    # single-pass form, valid for 0 <= slope < 1
    return np.maximum(x, x * np.asarray(slope, dtype=x.dtype))


def leaky_relu_backward(grad, x, slope: float = 0.1):
    one = np.asarray(1.0, dtype=grad.dtype)
    return grad * np.where(x > 0, one, np.asarray(slope, dtype=grad.dtype))


def pow_alpha(x, alpha: float):
    """Elementwise x**alpha on non-negative input (raises otherwise)."""
    if (x < 0).any():
        raise ValueError("pow_alpha requires non-negative input; apply relu first")
    return x ** np.asarray(alpha, dtype=x.dtype)


def pow_alpha_backward(grad, x, alpha: float):
    """d(x**alpha)/dx with the gradient at x == 0 defined as 0.

    For alpha < 1 the true derivative diverges at 0; pinning it to 0 keeps
    mask-update training finite.
    """
    a = np.asarray(alpha, dtype=x.dtype)
    safe = np.where(x > 0, x, 1.0).astype(x.dtype, copy=False)
    d = np.where(x > 0, a * safe ** (a - 1), np.asarray(0.0, dtype=x.dtype))
    return grad * d


def add(a, b):
    _check_same_shape(a, b)
    return a + b


def add_backward(grad):
    return grad, grad


def mul(a, b):
    _check_same_shape(a, b)
    return a * b


def mul_backward(grad, a, b):
    return grad * b, grad * a


def scale(x, s: float):
    return x * np.asarray(s, dtype=x.dtype)


def scale_backward(grad, s: float):
    return grad * np.asarray(s, dtype=grad.dtype)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# pooling / resampling
# ---------------------------------------------------------------------------

def maxpool2(x):
    """2x2 max pool. Requires even spatial dims; ties go to the first window index."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    return K.maxpool2_forward(np.ascontiguousarray(x))


def maxpool2_backward(grad, idx, h: int, w: int):
    return K.maxpool2_backward(np.ascontiguousarray(grad), np.ascontiguousarray(idx), h, w)


def upsample_nearest2(x):
    """Replicate every pixel into a 2x2 block."""
    return K.upsample2_forward(np.ascontiguousarray(x))


def upsample_nearest2_backward(grad):
    """Sum the four child gradients of every source pixel."""
    return K.upsample2_backward(np.ascontiguousarray(grad))


# ---------------------------------------------------------------------------
# stochastic ops
# ---------------------------------------------------------------------------

def dropout(x, rate: float, rng: np.random.Generator, training: bool = True):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Returns (output, mask); mask already carries the 1/(1-rate) scale so the
    backward pass is a single multiply. Eval mode (or rate 0) is the identity
    with mask None.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def gaussian(rng: np.random.Generator, shape, dtype=np.float32):
    """I.i.d. standard normal samples, deterministic for a given generator state."""
    return rng.standard_normal(shape, dtype=dtype)
