"""Functional forward/backward kernels on ``float64`` arrays in NCHW layout."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col3(x: np.ndarray) -> np.ndarray:
    # (N, C, H, W) -> (N*H*W, C*9) for a 3x3 kernel with one pixel of zero padding
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)


def conv2d_forward(x, kernels, bias):
    """3x3 stride-1 'same' cross-correlation.

    ``x`` is ``(N, C, H, W)``, ``kernels`` is ``(F, C, 3, 3)``; returns the
    ``(N, F, H, W)`` output and the cache needed by :func:`conv2d_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    n, c, h, w = x.shape
    f = kernels.shape[0]
    if kernels.shape != (f, c, 3, 3) or bias.shape != (f,):
        raise ValueError(
            f"kernel {kernels.shape} / bias {bias.shape} incompatible with {c}-channel input"
        )
    cols = _im2col3(x)
    out = cols @ kernels.reshape(f, c * 9).T + bias
    return out.reshape(n, h, w, f).transpose(0, 3, 1, 2), (x.shape, cols)


def conv2d_backward(dout, kernels, cache):
    """Gradients ``(dx, dkernels, dbias)`` of :func:`conv2d_forward`."""
    (n, c, h, w), cols = cache
    f = kernels.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(n * h * w, f)
    dk = (d2.T @ cols).reshape(kernels.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ kernels.reshape(f, c * 9)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h, j : j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dk, db


def maxpool2_forward(x):
    """2x2 stride-2 max pooling; ties go to the first element in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2_backward(dout, cache):
    (n, c, h, w), arg = cache
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(n, c, h, w)


def dense_forward(x, weights, bias):
    """``x @ weights + bias`` with ``weights`` shaped ``(in, out)``."""
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ValueError(
            f"dense input width {x.shape[-1]} vs weights {weights.shape}, bias {bias.shape}"
        )
    return x @ weights + bias, x


def dense_backward(dout, weights, cache):
    x = cache
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, rate: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout; a no-op outside training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean ``-log p[label]`` over the batch and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
