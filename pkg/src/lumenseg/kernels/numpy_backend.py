"""Vectorized numpy implementations of the convolution kernels.

This is the fallback backend: pure numpy, no compiled code. Layout is
channels-last throughout: images are (batch, rows, cols, channels) and 2D
kernel stacks are (k_rows, k_cols, c_in, c_out). The forward pass builds the
patch matrix with stride tricks and hands one big matmul to BLAS; the input
gradient is scattered back with one vectorized add per kernel offset.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _pad2d(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def conv2d_forward(x, w, stride=1, padding=0):
    """Cross-correlate x (b,p,q,c_in) with w (kh,kw,c_in,c_out)."""
    kh, kw, c_in, c_out = w.shape
    xp = _pad2d(x, padding)
    # windows: (b, p', q', c_in, kh, kw) after striding
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    b, ph, qh = win.shape[:3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        b * ph * qh, kh * kw * c_in
    )
    y = cols @ w.reshape(kh * kw * c_in, c_out)
    return y.reshape(b, ph, qh, c_out)


def conv2d_backward(x, w, grad_out, stride=1, padding=0):
    """Gradients of conv2d w.r.t. input and kernels.

    grad_out has the forward output shape (b, p', q', c_out). Returns
    (grad_x, grad_w) with the shapes of x and w.
    """
    kh, kw, c_in, c_out = w.shape
    b, ph, qh, _ = grad_out.shape
    xp = _pad2d(x, padding)

    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        b * ph * qh, kh * kw * c_in
    )
    gy = grad_out.reshape(b * ph * qh, c_out)
    grad_w = (cols.T @ gy).reshape(kh, kw, c_in, c_out)

    # grad wrt padded input: scatter each kernel offset's contribution
    gcols = (gy @ w.reshape(kh * kw * c_in, c_out).T).reshape(
        b, ph, qh, kh, kw, c_in
    )
    grad_xp = np.zeros_like(xp)
    for u in range(kh):
        iu = u + stride * (ph - 1) + 1
        for v in range(kw):
            jv = v + stride * (qh - 1) + 1
            grad_xp[:, u:iu:stride, v:jv:stride, :] += gcols[:, :, :, u, v, :]
    if padding:
        return grad_xp[:, padding:-padding, padding:-padding, :], grad_w
    return grad_xp, grad_w


def conv3d_forward(x, w):
    """Cross-correlate x (b,r,p,q,c_in) with w (r,kh,kw,c_in,n_k).

    The kernel spans the full temporal depth and there is no padding, so the
    output is (b, 1, p-kh+1, q-kw+1, n_k).
    """
    r, kh, kw, c_in, n_k = w.shape
    win = sliding_window_view(x, (r, kh, kw), axis=(1, 2, 3))
    # win: (b, 1, p', q', c_in, r, kh, kw)
    b, _, ph, qh = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(
        b * ph * qh, r * kh * kw * c_in
    )
    y = cols @ w.reshape(r * kh * kw * c_in, n_k)
    return y.reshape(b, 1, ph, qh, n_k)


def conv3d_backward(x, w, grad_out):
    """Gradients of conv3d w.r.t. input and kernels."""
    r, kh, kw, c_in, n_k = w.shape
    b, _, ph, qh, _ = grad_out.shape

    win = sliding_window_view(x, (r, kh, kw), axis=(1, 2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(
        b * ph * qh, r * kh * kw * c_in
    )
    gy = grad_out.reshape(b * ph * qh, n_k)
    grad_w = (cols.T @ gy).reshape(r, kh, kw, c_in, n_k)

    gcols = (gy @ w.reshape(r * kh * kw * c_in, n_k).T).reshape(
        b, ph, qh, r, kh, kw, c_in
    )
    grad_x = np.zeros_like(x)
    for t in range(r):
        for u in range(kh):
            for v in range(kw):
                grad_x[:, t, u : u + ph, v : v + qh, :] += gcols[:, :, :, t, u, v, :]
    return grad_x, grad_w
