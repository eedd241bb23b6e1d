"""Trainable layer building blocks on top of the tensor ops.

A Module tracks parameters (trainable Tensors) and buffers (persistent
arrays such as batchnorm running statistics) through attribute registration
order, which fixes the serialization order of weight files.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        self.training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def named_state(self, prefix=""):
        """Parameters then buffers, in registration order per submodule."""
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value.data
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_state(prefix + name + ".")

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, x):
        return self.forward(x)


def he_uniform(rng, shape, fan_in, dtype, gain=2.0):
    """Fan-in scaled uniform init; gain 2 for relu-followed weights, 1 for
    linear paths (identity projections, the sigmoid head)."""
    limit = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2d(Module):
    """3x3 / 1x1 cross-correlation layer, channels-last."""

    def __init__(self, kh, kw, c_in, c_out, stride=1, padding=0, bias=True,
                 gain=2.0, *, rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = kh * kw * c_in
        self.w = Tensor(he_uniform(rng, (kh, kw, c_in, c_out), fan_in, dtype, gain),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        y = T.conv2d(x, self.w, self.stride, self.padding)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class Conv3d(Module):
    """Full-temporal-depth 3D cross-correlation (the temporal front)."""

    def __init__(self, r, kh, kw, c_in, n_k, bias=True, *, rng, dtype=np.float32):
        super().__init__()
        fan_in = r * kh * kw * c_in
        self.w = Tensor(he_uniform(rng, (r, kh, kw, c_in, n_k), fan_in, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(n_k, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        y = T.conv3d(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class BatchNorm(Module):
    """Per-channel batch normalization; batch statistics while training,
    running averages (momentum 0.9) at inference."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c, eps=1e-5, momentum=0.9, gamma_init=1.0, *, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.full(c, gamma_init, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def forward(self, x):
        if self.training:
            axes = tuple(range(x.data.ndim - 1))
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(
                self.running_mean.dtype
            )
            self.running_var = (m * self.running_var + (1 - m) * var).astype(
                self.running_var.dtype
            )
            return T.batchnorm(x, self.gamma, self.beta, self.eps)
        return T.batchnorm_inference(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
        )


class ConvBNRelu(Module):
    def __init__(self, c_in, c_out, *, rng, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(3, 3, c_in, c_out, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    """Identity branch added to a (conv -> batchnorm -> relu) x2 branch.

    A 1x1 projection maps the identity when channel counts differ.
    """

    def __init__(self, c_in, c_out, *, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(3, 3, c_in, c_out, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv2d(3, 3, c_out, c_out, padding=1, bias=False, rng=rng, dtype=dtype)
        # small branch gain keeps deep stacks near-identity at init, so the
        # head never starts saturated
        self.bn2 = BatchNorm(c_out, gamma_init=0.1, dtype=dtype)
        self.proj = (
            None
            if c_in == c_out
            else Conv2d(1, 1, c_in, c_out, bias=False, gain=1.0, rng=rng, dtype=dtype)
        )

    def forward(self, x):
        branch = T.relu(self.bn1(self.conv1(x)))
        branch = T.relu(self.bn2(self.conv2(branch)))
        identity = x if self.proj is None else self.proj(x)
        return T.add(identity, branch)
