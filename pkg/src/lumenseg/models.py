"""The four ensemble members and their weight files.

Two single-frame cores: a residual U-Net (m1) and a plain, skip-free
encoder-decoder (m2) that fills the second-opinion slot with a deliberately
different architecture. Their temporal extensions (M1, M2) prepend a 3D
convolution over a triplet of frames, zero-pad the two spatial axes back to
the core's expected extents, drop the collapsed temporal axis, and feed the
core. M2's temporal kernel count is fixed at 3 so the unmodified core's
input-channel contract holds.

Weight files are little-endian binary: magic ``LSEG``, a u32 format
version, a JSON config record, a manifest of (name, dtype, shape) entries,
then the raw 32-bit floats in manifest order.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, ShapeError
from .layers import BatchNorm, Conv2d, Conv3d, ConvBNRelu, Module, ResidualBlock

VARIANTS = ("m1", "m2", "M1", "M2")
MAGIC = b"LSEG"
FORMAT_VERSION = 1

# architecture defaults, desk scale; M-variants wrap the matching core
CORE_SHAPES = {"m1": dict(base_width=16, depth=3), "m2": dict(base_width=12, depth=2)}
DEFAULT_TEMPORAL_KERNELS = {"M1": 8, "M2": 3}


@dataclass
class ModelConfig:
    variant: str
    input_spatial: tuple = (64, 64)
    channels: int = 3
    temporal_depth: int = 1
    temporal_kernels: int = 0
    base_width: int = 16
    depth: int = 3

    def __post_init__(self):
        self.input_spatial = tuple(self.input_spatial)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if self.is_temporal:
            if self.temporal_depth != 3:
                raise ConfigError(
                    f"{self.variant} takes triplets: temporal_depth must be 3, got {self.temporal_depth}"
                )
            if self.variant == "M2" and self.temporal_kernels != 3:
                raise ConfigError(
                    f"M2 requires temporal_kernels == 3 to match the core input, got {self.temporal_kernels}"
                )
            if self.temporal_kernels < 1:
                raise ConfigError("temporal extensions need temporal_kernels >= 1")
        else:
            if self.temporal_depth != 1:
                raise ConfigError(
                    f"single-frame {self.variant} must have temporal_depth 1, got {self.temporal_depth}"
                )
            if self.temporal_kernels:
                raise ConfigError(f"{self.variant} does not use temporal_kernels")
        p, q = self.input_spatial
        unit = 2 ** self.depth
        if p % unit or q % unit:
            raise ConfigError(
                f"spatial extents {p}x{q} not divisible by 2^depth = {unit}"
            )

    @property
    def is_temporal(self):
        return self.variant in ("M1", "M2")

    @property
    def core_variant(self):
        return self.variant.lower()

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid config record: {exc}") from None
        return cls(**raw)


def default_config(variant, size=64, channels=3, temporal_kernels=None):
    """Desk-scale configuration for a variant."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {variant!r}")
    core = variant.lower()
    shape = CORE_SHAPES[core]
    if variant in ("M1", "M2"):
        n_k = DEFAULT_TEMPORAL_KERNELS[variant] if temporal_kernels is None else temporal_kernels
        return ModelConfig(
            variant=variant,
            input_spatial=(size, size),
            channels=channels,
            temporal_depth=3,
            temporal_kernels=n_k,
            **shape,
        )
    return ModelConfig(
        variant=variant, input_spatial=(size, size), channels=channels, **shape
    )


# ---------------------------------------------------------------------------
# architectures


class ResUNet(Module):
    """Residual-block U-Net: encoder/decoder with skip connections."""

    def __init__(self, in_channels, base_width, depth, *, rng, dtype=np.float32):
        super().__init__()
        widths = [base_width * 2 ** i for i in range(depth + 1)]
        self.encoders = []
        c = in_channels
        for i in range(depth):
            self.encoders.append(ResidualBlock(c, widths[i], rng=rng, dtype=dtype))
            c = widths[i]
        self.bottleneck = ResidualBlock(widths[depth - 1], widths[depth], rng=rng, dtype=dtype)
        self.decoders = [
            ResidualBlock(widths[i] + widths[i + 1], widths[i], rng=rng, dtype=dtype)
            for i in reversed(range(depth))
        ]
        self.head = Conv2d(1, 1, widths[0], 1, bias=True, gain=1.0, rng=rng, dtype=dtype)

    def forward(self, x):
        h = x
        skips = []
        for block in self.encoders:
            h = block(h)
            skips.append(h)
            h = T.maxpool2(h)
        h = self.bottleneck(h)
        for block, skip in zip(self.decoders, reversed(skips)):
            h = T.upsample2(h)
            h = T.concat_channels(skip, h)
            h = block(h)
        return T.sigmoid(self.head(h))


class LiteSegNet(Module):
    """Plain convolutional encoder-decoder: no residuals, no skips."""

    def __init__(self, in_channels, base_width, depth, *, rng, dtype=np.float32):
        super().__init__()
        widths = [base_width * 2 ** i for i in range(depth + 1)]
        self.encoders = []
        c = in_channels
        for i in range(depth):
            self.encoders.append(ConvBNRelu(c, widths[i], rng=rng, dtype=dtype))
            self.encoders.append(ConvBNRelu(widths[i], widths[i], rng=rng, dtype=dtype))
            c = widths[i]
        self.mid1 = ConvBNRelu(widths[depth - 1], widths[depth], rng=rng, dtype=dtype)
        self.mid2 = ConvBNRelu(widths[depth], widths[depth], rng=rng, dtype=dtype)
        self.decoders = []
        for i in reversed(range(depth)):
            self.decoders.append(ConvBNRelu(widths[i + 1], widths[i], rng=rng, dtype=dtype))
            self.decoders.append(ConvBNRelu(widths[i], widths[i], rng=rng, dtype=dtype))
        self.head = Conv2d(1, 1, widths[0], 1, bias=True, gain=1.0, rng=rng, dtype=dtype)

    def forward(self, x):
        h = x
        for i in range(0, len(self.encoders), 2):
            h = self.encoders[i](h)
            h = self.encoders[i + 1](h)
            h = T.maxpool2(h)
        h = self.mid2(self.mid1(h))
        for i in range(0, len(self.decoders), 2):
            h = self.decoders[i](T.upsample2(h))
            h = self.decoders[i + 1](h)
        return T.sigmoid(self.head(h))


class TemporalModel(Module):
    """A core model prepended with a full-depth 3D convolution.

    Triplet (3,p,q,c) -> conv3d -> (1,p-2,q-2,n_k) -> zero pad -> (1,p,q,n_k)
    -> drop temporal axis -> core -> (p,q,1).
    """

    def __init__(self, front, core):
        super().__init__()
        self.front = front
        self.core = core

    def forward(self, x):
        if x.data.ndim == 4:
            h = self.front(T.reshape(x, (1,) + x.shape))
            squeeze = True
        elif x.data.ndim == 5:
            h = self.front(x)
            squeeze = False
        else:
            raise ShapeError(f"temporal model expects 4 or 5 dims, got shape {x.shape}")
        h = T.zero_pad_spatial(h, 1)
        b, _, p, q, n_k = h.shape
        h = T.reshape(h, (b, p, q, n_k))
        y = self.core(h)
        return T.reshape(y, y.shape[1:]) if squeeze else y


class Model(Module):
    """A segmentation model: config, architecture, and prediction helpers."""

    def __init__(self, config, net, dtype=np.float32):
        super().__init__()
        self.config = config
        self.net = net
        self.dtype = dtype

    def forward(self, x):
        return self.net(x)

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def predict(self, sample):
        """Probability map (p,q) for one frame or triplet (numpy in, numpy out)."""
        return self.predict_batch(sample[None])[0]

    def predict_batch(self, samples):
        """Probability maps (n,p,q) for stacked frames or triplets."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                out = self.net(T.Tensor(np.asarray(samples, dtype=self.dtype)))
        finally:
            self.train(was_training)
        return out.data[..., 0]


def build_model(config, seed=0, dtype=np.float32):
    """Deterministically build a model variant from its config."""
    rng = np.random.default_rng(seed)
    in_ch = config.temporal_kernels if config.is_temporal else config.channels
    core_cls = ResUNet if config.core_variant == "m1" else LiteSegNet
    core = core_cls(in_ch, config.base_width, config.depth, rng=rng, dtype=dtype)
    if config.is_temporal:
        front = Conv3d(
            config.temporal_depth, 3, 3, config.channels, config.temporal_kernels,
            rng=rng, dtype=dtype,
        )
        net = TemporalModel(front, core)
    else:
        net = core
    model = Model(config, net, dtype=dtype)
    expected = expected_parameter_count(config)
    actual = model.parameter_count()
    if actual != expected:
        raise ConfigError(
            f"parameter count drifted for {config.variant}: built {actual}, expected {expected}"
        )
    return model


def extend_temporal(core_config, temporal_kernels=None, seed=0, dtype=np.float32):
    """Temporal extension of a single-frame core config."""
    if core_config.is_temporal:
        raise ConfigError(f"{core_config.variant} is already a temporal model")
    variant = core_config.variant.upper()
    n_k = temporal_kernels
    if n_k is None:
        n_k = DEFAULT_TEMPORAL_KERNELS[variant]
    config = ModelConfig(
        variant=variant,
        input_spatial=core_config.input_spatial,
        channels=core_config.channels,
        temporal_depth=3,
        temporal_kernels=n_k,
        base_width=core_config.base_width,
        depth=core_config.depth,
    )
    return build_model(config, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# analytic parameter counts (cross-checked against built models)


def _residual_block_count(c_in, c_out):
    n = 9 * c_in * c_out + 9 * c_out * c_out + 4 * c_out
    if c_in != c_out:
        n += c_in * c_out
    return n


def _conv_bn_relu_count(c_in, c_out):
    return 9 * c_in * c_out + 2 * c_out


def expected_parameter_count(config):
    """Trainable parameter count as a pure function of the config."""
    in_ch = config.temporal_kernels if config.is_temporal else config.channels
    widths = [config.base_width * 2 ** i for i in range(config.depth + 1)]
    total = 0
    if config.core_variant == "m1":
        c = in_ch
        for i in range(config.depth):
            total += _residual_block_count(c, widths[i])
            c = widths[i]
        total += _residual_block_count(widths[-2], widths[-1])
        for i in reversed(range(config.depth)):
            total += _residual_block_count(widths[i] + widths[i + 1], widths[i])
    else:
        c = in_ch
        for i in range(config.depth):
            total += _conv_bn_relu_count(c, widths[i])
            total += _conv_bn_relu_count(widths[i], widths[i])
            c = widths[i]
        total += _conv_bn_relu_count(widths[-2], widths[-1])
        total += _conv_bn_relu_count(widths[-1], widths[-1])
        for i in reversed(range(config.depth)):
            total += _conv_bn_relu_count(widths[i + 1], widths[i])
            total += _conv_bn_relu_count(widths[i], widths[i])
    total += widths[0] + 1  # 1x1 head
    if config.is_temporal:
        total += (
            config.temporal_depth * 9 * config.channels * config.temporal_kernels
            + config.temporal_kernels
        )
    return total


# parameter counts for the default desk-scale configs (frozen; rebuilt models
# must match -- see tests)
PARAM_COUNTS = {
    "m1": expected_parameter_count(default_config("m1")),
    "m2": expected_parameter_count(default_config("m2")),
    "M1": expected_parameter_count(default_config("M1")),
    "M2": expected_parameter_count(default_config("M2")),
}


# ---------------------------------------------------------------------------
# weight files


def save_weights(model, path):
    entries = list(model.named_state())
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    cfg = model.config.to_json().encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(entries))
    for name, data in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", 2)
        blob += b"f4"
        blob += struct.pack("<B", data.ndim)
        for extent in data.shape:
            blob += struct.pack("<I", extent)
    for _, data in entries:
        blob += np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated weight file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]


def _read_header(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    config = ModelConfig.from_json(r.take(r.u32()).decode("utf-8"))
    manifest = []
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        dtype = r.take(r.u8()).decode("ascii")
        if dtype != "f4":
            raise FormatError(f"{path}: parameter {name!r} has unsupported dtype {dtype!r}")
        shape = tuple(r.u32() for _ in range(r.u8()))
        manifest.append((name, shape))
    return config, manifest, r


def load_state(model, path):
    """Fill a built model's parameters/buffers from a weight file.

    The file manifest must match the model's state exactly; the first
    mismatching entry is named in the error.
    """
    config, manifest, r = _read_header(path)
    state = list(model.named_state())
    for (fname, fshape), (mname, mdata) in zip(manifest, state):
        if fname != mname:
            raise FormatError(
                f"{path}: parameter mismatch: file has {fname!r}, model expects {mname!r}"
            )
        if fshape != mdata.shape:
            raise FormatError(
                f"{path}: parameter {fname!r}: file shape {fshape} != model shape {mdata.shape}"
            )
    if len(manifest) != len(state):
        raise FormatError(
            f"{path}: file has {len(manifest)} entries, model expects {len(state)}"
        )
    arrays = []
    for name, shape in manifest:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(4 * count)
        arrays.append(np.frombuffer(raw, dtype="<f4").reshape(shape))
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes after parameter data")
    holders = dict(_state_holders(model))
    for (name, _), arr in zip(manifest, arrays):
        holders[name](arr)
    return model


def _state_holders(model, prefix=""):
    """(name, setter) pairs mirroring named_state order."""
    for name, value in vars(model).items():
        if isinstance(value, T.Tensor) and value.requires_grad:
            yield prefix + name, _tensor_setter(value, model)
    for name in getattr(model, "_buffer_names", ()):
        yield prefix + name, _buffer_setter(model, name)
    for name, child in model._children():
        yield from _state_holders(child, prefix + name + ".")


def _tensor_setter(tensor, owner):
    def set_(arr):
        tensor.data = np.asarray(arr, dtype=tensor.data.dtype).copy()
    return set_


def _buffer_setter(module, name):
    def set_(arr):
        setattr(module, name, np.asarray(arr, dtype=getattr(module, name).dtype).copy())
    return set_


def load_weights(path, dtype=np.float32):
    """Rebuild a model from a weight file."""
    config, _, _ = _read_header(path)
    model = build_model(config, seed=0, dtype=dtype)
    return load_state(model, path)
