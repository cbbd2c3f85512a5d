"""Pure numpy implementations of the conv/pool kernels.

Layout is NCHW throughout. These are the reference versions; the compiled
module ``lyapnet._ckernels`` must agree with them element for element.
"""

import numpy as np


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _padded(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` (N, C, H, W) into columns of shape (N, C*kh*kw, OH*OW)."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    xp = _padded(x, pad)
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for p in range(kh):
        rows = slice(p, p + stride * oh, stride)
        for q in range(kw):
            cols[:, :, p, q] = xp[:, :, rows, q:q + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    n, c, h, w = x_shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for p in range(kh):
        rows = slice(p, p + stride * oh, stride)
        for q in range(kw):
            xp[:, :, rows, q:q + stride * ow:stride] += cols[:, :, p, q]
    if pad == 0:
        return xp
    return xp[:, :, pad:pad + h, pad:pad + w]


def maxpool_forward(x, window):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Returns the pooled map and, per output cell, the row-major offset of the
    first maximal element inside its window.
    """
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    blocks = x[:, :, :oh * window, :ow * window].reshape(n, c, oh, window, ow, window)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, window * window)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int64)


def maxpool_backward(dout, idx, x_shape, window):
    n, c, h, w = x_shape
    oh, ow = dout.shape[2], dout.shape[3]
    blocks = np.zeros((n, c, oh, ow, window * window), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, :oh * window, :ow * window] = blocks.reshape(n, c, oh * window, ow * window)
    return dx
