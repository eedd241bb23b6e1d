"""Convolution kernels backed by the compiled patch loops.

Same contract and layout as :mod:`lumenseg.kernels.numpy_backend`; the
patch gather/scatter runs in the compiled extension and the contraction
itself is a single BLAS matmul.
"""

import numpy as np

from . import _fastkernels as _fk

NAME = "cython"


def _pad2d(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def conv2d_forward(x, w, stride=1, padding=0):
    kh, kw, c_in, c_out = w.shape
    xp = _pad2d(x, padding)
    b, pp, qp, _ = xp.shape
    ph = (pp - kh) // stride + 1
    qh = (qp - kw) // stride + 1
    cols = np.empty((b * ph * qh, kh * kw * c_in), dtype=x.dtype)
    _fk.im2col2d(xp, cols, kh, kw, stride, ph, qh)
    y = cols @ np.ascontiguousarray(w.reshape(kh * kw * c_in, c_out))
    return y.reshape(b, ph, qh, c_out)


def conv2d_backward(x, w, grad_out, stride=1, padding=0):
    kh, kw, c_in, c_out = w.shape
    b, ph, qh, _ = grad_out.shape
    xp = _pad2d(x, padding)

    cols = np.empty((b * ph * qh, kh * kw * c_in), dtype=x.dtype)
    _fk.im2col2d(xp, cols, kh, kw, stride, ph, qh)
    gy = np.ascontiguousarray(grad_out.reshape(b * ph * qh, c_out))
    grad_w = (cols.T @ gy).reshape(kh, kw, c_in, c_out)

    wmat = np.ascontiguousarray(w.reshape(kh * kw * c_in, c_out))
    gcols = np.ascontiguousarray(gy @ wmat.T)
    grad_xp = np.zeros_like(xp)
    _fk.col2im2d(gcols, grad_xp, kh, kw, stride, ph, qh)
    if padding:
        return grad_xp[:, padding:-padding, padding:-padding, :], grad_w
    return grad_xp, grad_w


def conv3d_forward(x, w):
    r, kh, kw, c_in, n_k = w.shape
    x = np.ascontiguousarray(x)
    b, _, p, q, _ = x.shape
    ph = p - kh + 1
    qh = q - kw + 1
    cols = np.empty((b * ph * qh, r * kh * kw * c_in), dtype=x.dtype)
    _fk.im2col3d(x, cols, kh, kw, ph, qh)
    y = cols @ np.ascontiguousarray(w.reshape(r * kh * kw * c_in, n_k))
    return y.reshape(b, 1, ph, qh, n_k)


def conv3d_backward(x, w, grad_out):
    r, kh, kw, c_in, n_k = w.shape
    b, _, ph, qh, _ = grad_out.shape
    x = np.ascontiguousarray(x)

    cols = np.empty((b * ph * qh, r * kh * kw * c_in), dtype=x.dtype)
    _fk.im2col3d(x, cols, kh, kw, ph, qh)
    gy = np.ascontiguousarray(grad_out.reshape(b * ph * qh, n_k))
    grad_w = (cols.T @ gy).reshape(r, kh, kw, c_in, n_k)

    wmat = np.ascontiguousarray(w.reshape(r * kh * kw * c_in, n_k))
    gcols = np.ascontiguousarray(gy @ wmat.T)
    grad_x = np.zeros_like(x)
    _fk.col2im3d(gcols, grad_x, kh, kw, ph, qh)
    return grad_x, grad_w
