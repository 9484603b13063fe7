"""Forward/backward pairs for every layer the network uses.

All arrays are float64 numpy arrays laid out as ``[batch, time, channels]``
for sequence data and ``[batch, features]`` for dense data. Each ``*_forward``
returns ``(out, cache)``; the matching ``*_backward`` takes the upstream
gradient and the cache and returns gradients for every input.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


class NumericError(FloatingPointError):
    """Raised when a value leaves the finite range."""


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def _as3d(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{name} must be [batch, time, channels], got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv_output_length(time, kernel, stride):
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if time < kernel:
        raise ValueError(f"time length {time} is shorter than kernel {kernel}")
    return (time - kernel) // stride + 1


def conv1d_forward(x, w, b, stride=1):
    """Valid cross-correlation. ``x`` [B,T,Cin], ``w`` [K,Cin,Cout], ``b`` [Cout]."""
    x = _as3d(x, "input")
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 3:
        raise ValueError(f"kernel must be [k, ch_in, ch_out], got shape {w.shape}")
    k, cin, cout = w.shape
    if x.shape[2] != cin:
        raise ValueError(f"input has {x.shape[2]} channels but kernel expects {cin}")
    if b.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {b.shape}")
    t_out = conv_output_length(x.shape[1], k, stride)
    # windows: [B, T_out, Cin, K]
    windows = sliding_window_view(x, k, axis=1)[:, : (t_out - 1) * stride + 1 : stride]
    out = np.tensordot(windows, w, axes=([2, 3], [1, 0])) + b
    return out, (x.shape, windows, w, stride)


def conv1d_backward(dout, cache):
    x_shape, windows, w, stride = cache
    k = w.shape[0]
    t_out = dout.shape[1]
    dw = np.tensordot(windows, dout, axes=([0, 1], [0, 1])).transpose(1, 0, 2)
    db = dout.sum(axis=(0, 1))
    dx = np.zeros(x_shape)
    span = (t_out - 1) * stride + 1
    for j in range(k):
        dx[:, j : j + span : stride, :] += dout @ w[j].T
    return dx, dw, db


def conv1d(x, w, b, stride=1):
    return conv1d_forward(x, w, b, stride)[0]


# --------------------------------------------------------------------------
# batch normalization (per channel over batch and time)
# --------------------------------------------------------------------------

def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, mode="train",
                        epsilon=BN_EPSILON, momentum=BN_MOMENTUM):
    """Normalize ``x`` [B,T,C] or [B,C] per channel.

    In train mode ``running_mean`` and ``running_var`` are updated in place.
    """
    x = np.asarray(x, dtype=np.float64)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        count = x.size // x.shape[-1]
        if count < 2:
            raise ValueError("train-mode batch norm needs more than one value per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, mode, axes)


def batchnorm1d_backward(dout, cache):
    xhat, inv_std, gamma, mode, axes = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if mode == "infer":
        return dxhat * inv_std, dgamma, dbeta
    count = xhat.size // xhat.shape[-1]
    dx = (inv_std / count) * (
        count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# pooling, dropout, activations
# --------------------------------------------------------------------------

def maxpool1d_forward(x, pool):
    x = _as3d(x, "input")
    if pool < 1:
        raise ValueError(f"pool must be >= 1, got {pool}")
    bsz, t, c = x.shape
    t_out = t // pool
    if t_out == 0:
        raise ValueError(f"time length {t} is shorter than pool {pool}")
    blocks = x[:, : t_out * pool].reshape(bsz, t_out, pool, c)
    # argmax returns the first maximal element on ties
    idx = blocks.argmax(axis=2)
    out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (x.shape, idx, pool)


def maxpool1d_backward(dout, cache):
    x_shape, idx, pool = cache
    bsz, t, c = x_shape
    t_out = idx.shape[1]
    dblocks = np.zeros((bsz, t_out, pool, c))
    np.put_along_axis(dblocks, idx[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros(x_shape)
    dx[:, : t_out * pool] = dblocks.reshape(bsz, t_out * pool, c)
    return dx


def dropout_forward(x, rate, mode="train", rng=None):
    """Inverted dropout; identity in infer mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def dense_forward(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"cannot apply weight {w.shape} to input {x.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias must have shape ({w.shape[1]},), got {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def softmax(x, axis=-1):
    # wider float types (longdouble finite-difference oracles) pass through
    x = np.asarray(x, dtype=np.result_type(x, np.float64))
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dout, probs, axis=-1):
    return probs * (dout - (dout * probs).sum(axis=axis, keepdims=True))


def l2_normalize_forward(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise ValueError("cannot L2-normalize a zero vector")
    y = x / norm
    return y, (y, norm, axis)


def l2_normalize_backward(dout, cache):
    y, norm, axis = cache
    return (dout - y * (dout * y).sum(axis=axis, keepdims=True)) / norm


def l2_normalize(x, axis=-1):
    return l2_normalize_forward(x, axis)[0]


def relu(x):
    return relu_forward(x)[0]
