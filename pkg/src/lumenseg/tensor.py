"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient of the same shape.
Operations build a DAG of parent links and backward closures; calling
``backward()`` on a scalar result runs the closures in reverse topological
order. Only the operations the segmentation models need are provided.

Convolutions dispatch to the selected kernel backend (compiled extension or
numpy fallback); everything else is plain numpy. Dtype is preserved by every
op: float32 for training/inference, float64 for gradient checking.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor. Scalar unless a seed is given."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() needs a scalar output or explicit seed, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # arithmetic sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def sum(self):
        return tsum(self)

    def mean(self):
        return mul(tsum(self), _wrap(1.0 / self.size, self.dtype))

    def reshape(self, shape):
        return reshape(self, shape)


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _from_op(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given broadcast-source shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a, b):
    data = a.data + b.data
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return _from_op(data, (a, b), backward, "add")


def mul(a, b):
    data = a.data * b.data
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))
    return _from_op(data, (a, b), backward, "mul")


def div(a, b):
    data = a.data / b.data
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _from_op(data, (a, b), backward, "div")


def tsum(a):
    data = np.asarray(a.data.sum(), dtype=a.dtype)
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))
    return _from_op(data, (a,), backward, "sum")


def reshape(a, shape):
    data = a.data.reshape(shape)
    def backward(g):
        a._accumulate(g.reshape(a.shape))
    return _from_op(data, (a,), backward, "reshape")


def relu(a):
    data = np.maximum(a.data, 0)
    def backward(g):
        a._accumulate(g * (a.data > 0))
    return _from_op(data, (a,), backward, "relu")


def sigmoid(a):
    # stable two-sided form
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    def backward(g):
        a._accumulate(g * out * (1.0 - out))
    return _from_op(out, (a,), backward, "sigmoid")


# ---------------------------------------------------------------------------
# convolution / spatial ops
#
# Spatial ops accept a single sample or a batch: a leading batch axis is
# added internally when missing and stripped from the result.


def _batched(x, ndim):
    if x.data.ndim == ndim - 1:
        return reshape(x, (1,) + x.shape), True
    if x.data.ndim == ndim:
        return x, False
    raise ShapeError(f"expected {ndim - 1}- or {ndim}-dimensional input, got shape {x.shape}")


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlate x (p,q,c_in)|(b,p,q,c_in) with kernels (kh,kw,c_in,c_out)."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be >= 0, got {padding}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d kernels must be 4-dimensional, got shape {w.shape}")
    xb, squeeze = _batched(x, 4)
    kh, kw, c_in, _ = w.shape
    b, p, q, c = xb.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c} channels, kernels expect {c_in}")
    if kh > p + 2 * padding or kw > q + 2 * padding:
        raise ShapeError(
            f"conv2d kernel ({kh}x{kw}) larger than padded input ({p + 2 * padding}x{q + 2 * padding})"
        )
    data = kernels.conv2d_forward(xb.data, w.data, stride, padding)
    def backward(g):
        gx, gw = kernels.conv2d_backward(xb.data, w.data, g, stride, padding)
        if xb.requires_grad:
            xb._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
    out = _from_op(data, (xb, w), backward, "conv2d")
    return reshape(out, out.shape[1:]) if squeeze else out


def conv3d(x, w):
    """Cross-correlate x (r,p,q,c_in)|(b,r,p,q,c_in) with kernels (r,kh,kw,c_in,n_k).

    The kernel spans the full temporal depth: output (b,1,p-2,q-2,n_k) for
    3x3 spatial kernels, with no temporal or spatial padding.
    """
    if w.data.ndim != 5:
        raise ShapeError(f"conv3d kernels must be 5-dimensional, got shape {w.shape}")
    xb, squeeze = _batched(x, 5)
    r, kh, kw, c_in, _ = w.shape
    b, rx, p, q, c = xb.shape
    if rx != r:
        raise ShapeError(f"conv3d temporal mismatch: input depth {rx}, kernel depth {r}")
    if c != c_in:
        raise ShapeError(f"conv3d channel mismatch: input has {c} channels, kernels expect {c_in}")
    if p < kh or q < kw:
        raise ShapeError(f"conv3d input ({p}x{q}) smaller than kernel ({kh}x{kw})")
    data = kernels.conv3d_forward(xb.data, w.data)
    def backward(g):
        gx, gw = kernels.conv3d_backward(xb.data, w.data, g)
        if xb.requires_grad:
            xb._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
    out = _from_op(data, (xb, w), backward, "conv3d")
    return reshape(out, out.shape[1:]) if squeeze else out


def zero_pad_spatial(x, pad=1):
    """Zero-pad the two spatial axes (the axes just before channels)."""
    if pad < 0:
        raise ConfigError(f"pad must be >= 0, got {pad}")
    if x.data.ndim < 3:
        raise ShapeError(f"zero_pad_spatial needs at least 3 dims, got shape {x.shape}")
    if pad == 0:
        return x
    widths = [(0, 0)] * x.data.ndim
    widths[-3] = (pad, pad)
    widths[-2] = (pad, pad)
    data = np.pad(x.data, widths)
    sl = [slice(None)] * x.data.ndim
    sl[-3] = slice(pad, -pad)
    sl[-2] = slice(pad, -pad)
    sl = tuple(sl)
    def backward(g):
        x._accumulate(g[sl])
    return _from_op(data, (x,), backward, "zero_pad_spatial")


def maxpool2(x):
    """2x2 max pooling, stride 2. Ties route the gradient to the first
    window element in row-major scan order."""
    xb, squeeze = _batched(x, 4)
    b, p, q, c = xb.shape
    if p % 2 or q % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {p}x{q}")
    win = xb.data.reshape(b, p // 2, 2, q // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    flat = win.reshape(b, p // 2, q // 2, 4, c)
    idx = flat.argmax(axis=3)  # first max wins ties
    data = np.take_along_axis(flat, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        gwin = gflat.reshape(b, p // 2, q // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        xb._accumulate(gwin.reshape(b, p, q, c))
    out = _from_op(data, (xb,), backward, "maxpool2")
    return reshape(out, out.shape[1:]) if squeeze else out


def upsample2(x):
    """Nearest-neighbour 2x upsampling of the spatial axes."""
    xb, squeeze = _batched(x, 4)
    data = xb.data.repeat(2, axis=1).repeat(2, axis=2)
    b, p, q, c = xb.shape
    def backward(g):
        gwin = g.reshape(b, p, 2, q, 2, c)
        xb._accumulate(gwin.sum(axis=(2, 4)))
    out = _from_op(data, (xb,), backward, "upsample2")
    return reshape(out, out.shape[1:]) if squeeze else out


def concat_channels(a, b):
    """Concatenate along the channel (last) axis."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"concat_channels needs matching leading shapes, got {a.shape} vs {b.shape}"
        )
    data = np.concatenate([a.data, b.data], axis=-1)
    ca = a.shape[-1]
    def backward(g):
        if a.requires_grad:
            a._accumulate(g[..., :ca])
        if b.requires_grad:
            b._accumulate(g[..., ca:])
    return _from_op(data, (a, b), backward, "concat_channels")


def batchnorm(x, gamma, beta, eps=1e-5):
    """Batch normalization over all axes except channels (training mode:
    statistics come from x itself)."""
    if eps <= 0:
        raise ConfigError(f"batchnorm eps must be > 0, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batchnorm gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    axes = tuple(range(x.data.ndim - 1))
    m = x.size // c
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    data = gamma.data * xhat + beta.data
    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if x.requires_grad:
            gsum = g.sum(axis=axes)
            gx_sum = (g * xhat).sum(axis=axes)
            gx = (gamma.data * inv_std / m) * (m * g - gsum - xhat * gx_sum)
            x._accumulate(gx)
    return _from_op(data, (x, gamma, beta), backward, "batchnorm")


def batchnorm_inference(x, gamma, beta, running_mean, running_var, eps=1e-5):
    """Batch normalization with frozen statistics (inference mode)."""
    if eps <= 0:
        raise ConfigError(f"batchnorm eps must be > 0, got {eps}")
    inv_std = 1.0 / np.sqrt(running_var + eps)
    data = gamma.data * (x.data - running_mean) * inv_std + beta.data
    axes = tuple(range(x.data.ndim - 1))
    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((g * (x.data - running_mean) * inv_std).sum(axis=axes))
        if x.requires_grad:
            x._accumulate(g * gamma.data * inv_std)
    return _from_op(data, (x, gamma, beta), backward, "batchnorm_inference")
