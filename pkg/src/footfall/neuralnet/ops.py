"""Primitive layer operations with matching hand-written backward passes.

All ops work on batched inputs: conv/pool/batchnorm take (B, C, L),
linear takes (..., in). Each forward returns the output plus whatever
cache its backward needs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(x):
    # stable two-sided form
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (..., in) @ w (out, in).T + b (out,)."""
    return x @ w.T + b


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


def _check_conv_shapes(x, w):
    if x.ndim != 3:
        raise ValueError(f"conv1d input must be (B, C_in, L), got ndim={x.ndim}")
    if w.ndim != 3:
        raise ValueError(f"conv1d weight must be (C_out, C_in, K), got ndim={w.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d channel mismatch: input C_in={x.shape[1]}, weight C_in={w.shape[1]}")


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, padding: int):
    """Cross-correlation with zero padding; returns (y, cache).

    x: (B, C_in, L), w: (C_out, C_in, K) -> y: (B, C_out, L + 2*padding - K + 1).
    """
    _check_conv_shapes(x, w)
    k = w.shape[2]
    if x.shape[2] + 2 * padding - k + 1 < 1:
        raise ValueError(f"conv1d input length {x.shape[2]} too short for kernel {k} pad {padding}")
    xpad = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = sliding_window_view(xpad, k, axis=2)  # (B, C_in, L_out, K)
    y = np.einsum("bclk,ock->bol", cols, w, optimize=True)
    if b is not None:
        y += b[:, None]
    return y, (x, w, padding)


def conv1d_backward(dy: np.ndarray, cache):
    x, w, padding = cache
    k = w.shape[2]
    xpad = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = sliding_window_view(xpad, k, axis=2)
    dw = np.einsum("bol,bclk->ock", dy, cols, optimize=True)
    db = dy.sum(axis=(0, 2))
    # full correlation of dy with the kernel flipped along K recovers dx
    dypad = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1)))
    dycols = sliding_window_view(dypad, k, axis=2)  # (B, C_out, L + 2p, K)
    dxpad = np.einsum("bolk,ock->bcl", dycols, w[:, :, ::-1], optimize=True)
    dx = dxpad[:, :, padding:padding + x.shape[2]] if padding else dxpad
    return dx, dw, db


def maxpool1d_forward(x: np.ndarray, pool: int = 2):
    """Non-overlapping max pooling; trailing remainder dropped."""
    b, c, l = x.shape
    lo = l // pool
    xr = x[:, :, :lo * pool].reshape(b, c, lo, pool)
    idx = xr.argmax(axis=3)
    y = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
    return y, (idx, x.shape, pool)


def maxpool1d_backward(dy: np.ndarray, cache):
    idx, shape, pool = cache
    b, c, l = shape
    lo = l // pool
    dxr = np.zeros((b, c, lo, pool), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=3)
    dx = np.zeros(shape, dtype=dy.dtype)
    dx[:, :, :lo * pool] = dxr.reshape(b, c, lo * pool)
    return dx


def adaptive_avg_pool_forward(x: np.ndarray):
    """Average over the full length dimension: (B, C, L) -> (B, C)."""
    return x.mean(axis=2), x.shape


def adaptive_avg_pool_backward(dy: np.ndarray, shape):
    return np.broadcast_to(dy[:, :, None] / shape[2], shape).copy()


def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, training,
                        momentum: float = 0.1, eps: float = 1e-5):
    """Channel-wise batch norm over (B, C, L).

    Training normalizes with biased batch statistics and returns updated
    running stats (unbiased variance, torch convention); eval uses the
    stored running statistics.
    """
    if training:
        n = x.shape[0] * x.shape[2]
        mu = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu[:, None]) * inv[:, None]
        unbiased = var * n / max(n - 1, 1)
        new_rm = (1 - momentum) * running_mean + momentum * mu
        new_rv = (1 - momentum) * running_var + momentum * unbiased
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[:, None]) * inv[:, None]
        new_rm, new_rv = running_mean, running_var
    y = gamma[:, None] * xhat + beta[:, None]
    return y, (xhat, inv, gamma, training), (new_rm, new_rv)


def batchnorm1d_backward(dy, cache):
    xhat, inv, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[:, None]
    if training:
        n = dy.shape[0] * dy.shape[2]
        dx = inv[:, None] / n * (
            n * dxhat
            - dxhat.sum(axis=(0, 2))[:, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2))[:, None]
        )
    else:
        dx = dxhat * inv[:, None]
    return dx, dgamma, dbeta


def dropout_forward(x, p: float, rng: np.random.Generator):
    """Inverted dropout: scales at train time so inference needs no rescale."""
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy * mask
