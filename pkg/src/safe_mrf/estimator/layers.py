"""Layer primitives with hand-written backward passes.

Tensors are NHWC. Every ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` takes ``(dout, cache)``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

IN_EPS = 1e-5


def conv2d_forward(x, w, b=None, stride=1):
    """'Same'-padded convolution. ``w`` has shape (C_in, k, k, C_out)."""
    n, h, wd, c = x.shape
    cin, k, _, f = w.shape
    assert cin == c, f"conv expects {cin} input channels, got {c}"
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(c * k * k, f)
    if b is not None:
        out += b
    return out.reshape(n, ho, wo, f), (x.shape, cols, w, stride, b is not None)


def conv2d_backward(dout, cache):
    xshape, cols, w, stride, has_bias = cache
    n, h, wd, c = xshape
    cin, k, _, f = w.shape
    p = k // 2
    ho, wo = dout.shape[1], dout.shape[2]
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0) if has_bias else None
    dcols = (d2 @ w.reshape(c * k * k, f).T).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
    return dxp[:, p:p + h, p:p + wd, :], dw, db


def instance_norm_forward(x, gamma, beta, eps=IN_EPS):
    mu = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def instance_norm_backward(dout, cache):
    xhat, inv, gamma = cache
    m = xhat.shape[1] * xhat.shape[2]
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    s1 = dxhat.sum(axis=(1, 2), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
    dx = inv * (dxhat - s1 / m - xhat * s2 / m)
    return dx, dgamma, dbeta


def leaky_forward(x, slope):
    return np.where(x > 0, x, slope * x), (x > 0, slope)


def leaky_backward(dout, cache):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def upsample_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2), x.shape


def upsample_backward(dout, shape):
    n, h, w, c = shape
    return dout.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


def concat_forward(a, b):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(dout, split):
    return dout[..., :split], dout[..., split:]
