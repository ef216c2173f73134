"""Pure-numpy implementations of the convolution / pooling hot kernels.

These are the fallback path used when numba is unavailable or disabled via
``ORTHOSPHERE_BACKEND=numpy``. Convolutions go through im2col so the heavy
lifting lands in a single BLAS matmul; pooling uses a strided window view.
Both paths (this module and ``numba_impl``) must agree within float
round-off: the test suite compares them on random shapes.
"""

import numpy as np


def _im2col(x, f, stride, pad):
    """(N,C,H,W) -> (N*H2*W2, C*f*f) patch matrix, plus output spatial dims."""
    n, c, h, w = x.shape
    h2 = (h + 2 * pad - f) // stride + 1
    w2 = (w + 2 * pad - f) // stride + 1
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, h2, w2, f, f),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    # (N, H2, W2, C, f, f) -> rows ordered image-major, then output pixel
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h2 * w2, c * f * f)
    return np.ascontiguousarray(cols), h2, w2


def _col2im(cols, x_shape, f, stride, pad):
    """Scatter-add of an im2col patch matrix back onto the input grid."""
    n, c, h, w = x_shape
    h2 = (h + 2 * pad - f) // stride + 1
    w2 = (w + 2 * pad - f) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(n, h2, w2, c, f, f)
    for i in range(f):
        for j in range(f):
            xp[:, :, i : i + stride * h2 : stride, j : j + stride * w2 : stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad > 0:
        xp = xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def conv2d_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    m, _, f, _ = k.shape
    cols, h2, w2 = _im2col(x, f, stride, pad)
    out = cols @ k.reshape(m, c * f * f).T
    return out.reshape(n, h2, w2, m).transpose(0, 3, 1, 2).copy()


def conv2d_backward_input(gout, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    m, _, f, _ = k.shape
    g = gout.transpose(0, 2, 3, 1).reshape(-1, m)
    cols = g @ k.reshape(m, c * f * f)
    return _col2im(cols, x_shape, f, stride, pad)


def conv2d_backward_kernel(gout, x, k_shape, stride, pad):
    m, c, f, _ = k_shape
    cols, h2, w2 = _im2col(x, f, stride, pad)
    g = gout.transpose(0, 2, 3, 1).reshape(-1, m)
    return (g.T @ cols).reshape(m, c, f, f)


def maxpool_forward(x, window, stride):
    """Returns pooled values and flat argmax index per window (first max wins)."""
    n, c, h, w = x.shape
    h2 = (h - window) // stride + 1
    w2 = (w - window) // stride + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, h2, w2, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = windows.reshape(n, c, h2, w2, window * window)
    idx = flat.argmax(axis=-1)  # first occurrence on ties (row-major in window)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out.copy(), idx.astype(np.int64)


def maxpool_backward(gout, idx, x_shape, window, stride):
    n, c, h, w = x_shape
    _, _, h2, w2 = gout.shape
    gx = np.zeros(x_shape, dtype=gout.dtype)
    wi = idx // window  # row inside window
    wj = idx % window
    oi, oj = np.meshgrid(np.arange(h2), np.arange(w2), indexing="ij")
    rows = oi[None, None] * stride + wi
    cols = oj[None, None] * stride + wj
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (ni, ci, rows, cols), gout)
    return gx
