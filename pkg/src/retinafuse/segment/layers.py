"""NHWC layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, w, b):
    """Same-padded stride-1 convolution.

    x: (N, H, W, C), w: (k, k, C, O), b: (O,). k is odd.
    """
    k = w.shape[0]
    n, h, wd, c = x.shape
    if k == 1:
        cols = x.reshape(-1, c)
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        # (N, H, W, C, k, k) -> (N, H, W, k, k, C) to match the kernel layout
        win = sliding_window_view(xp, (k, k), axis=(1, 2))
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, k * k * c)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(n, h, wd, -1), (x.shape, cols, w)


def conv_backward(dout, cache):
    x_shape, cols, w = cache
    n, h, wd, c = x_shape
    k, o = w.shape[0], w.shape[-1]
    d2 = dout.reshape(-1, o)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(-1, o).T
    if k == 1:
        return dcols.reshape(x_shape), dw, db
    p = k // 2
    dcols = dcols.reshape(n, h, wd, k, k, c)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + h, j : j + wd, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p : p + h, p : p + wd, :], dw, db


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, cache):
    return dout * cache


def pool_forward(x):
    """2x2 max pooling with stride 2; ties route to the first maximum."""
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def pool_backward(dout, cache):
    shape, arg = cache
    n, h, w, c = shape
    blocks = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return blocks.reshape(shape)


def upsample_forward(x):
    """2x nearest-neighbor upsampling."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
