"""Forward/backward kernels for the five layer kinds, NHWC layout.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(output size, pad before, pad after) for SAME padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """``x``: (N, H, W, C); ``w``: (k, k, C, F); SAME padding."""
    n, h, wd, c = x.shape
    k, _, _, f = w.shape
    ho, top, bottom = same_padding(h, k, stride)
    wo, left, right = same_padding(wd, k, stride)
    if k == 1 and stride == 1:
        cols = x.reshape(n * h * wd, c)
        xp_shape = x.shape
    else:
        xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0))) if (top or bottom or left or right) else x
        xp_shape = xp.shape
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    out = cols @ w.reshape(k * k * c, f) + b
    cache = (cols, w, stride, x.shape, xp_shape, (top, left), (ho, wo))
    return out.reshape(n, ho, wo, f), cache


def conv_backward(dout: np.ndarray, cache):
    cols, w, stride, x_shape, xp_shape, (top, left), (ho, wo) = cache
    k, _, c, f = w.shape
    n = x_shape[0]
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(k * k * c, f).T
    if k == 1 and stride == 1:
        return dcols.reshape(x_shape), dw, db
    dcols = dcols.reshape(n, ho, wo, k, k, c)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    h, wd = x_shape[1], x_shape[2]
    return dxp[:, top:top + h, left:left + wd, :], dw, db


def batchnorm_forward(x, gamma, beta):
    """Training-mode normalization over (N, H, W) per channel."""
    mean = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv, gamma), mean, var


def batchnorm_backward(dout, cache):
    xhat, inv, gamma = cache
    m = dout.shape[0] * dout.shape[1] * dout.shape[2]
    dbeta = dout.sum(axis=(0, 1, 2))
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def batchnorm_inference(x, gamma, beta, running_mean, running_var):
    return (x - running_mean) / np.sqrt(running_var + BN_EPS) * gamma + beta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x):
    """2x2 stride-2 max pooling, ceil mode (odd edges padded with -inf)."""
    n, h, w, c = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    if (h % 2) or (w % 2):
        xp = np.full((n, 2 * ho, 2 * wo, c), -np.inf, dtype=x.dtype)
        xp[:, :h, :w, :] = x
    else:
        xp = x
    windows = xp.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout, cache):
    idx, x_shape = cache
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dwin = np.zeros((n, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dxp = dwin.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    return dxp[:, :h, :w, :]


def concat_forward(a, b):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(dout, split):
    return dout[..., :split], dout[..., split:]


def global_pool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def global_pool_backward(dout, x_shape):
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), x_shape).copy()


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)
